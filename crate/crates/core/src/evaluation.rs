//! Autonomous forecasting and the climate error.
//!
//! A trained reservoir is restarted at 50 evenly spaced times inside the
//! testing window. Each restart takes `r(t_i)` from the listening run, closes
//! the loop (`u` replaced by `W_out f_out(r)`) and is scored by the RMS error
//! over one Lyapunov time. The overall score is the RMS over restarts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Trajectory, LAMBDA_LORENZ};
use crate::error::{Error, Result};
use crate::integrate::{all_finite, DormandPrince, StepperConfig};
use crate::topology::Reservoir;
use crate::training::{apply_fout_into, Readout, TrainRecord};

/// Score assigned to a restart whose forecast stops being finite.
pub const SATURATED_EPSILON: f64 = 1e3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub n_windows: usize,
    pub lambda: f64,
    /// Forecast length; one Lyapunov time by default.
    pub horizon: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_windows: 50,
            lambda: LAMBDA_LORENZ,
            horizon: 1.0 / LAMBDA_LORENZ,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_windows == 0 || !(self.lambda > 0.0) || !(self.horizon > 0.0) {
            return Err(Error::Config(format!(
                "evaluation needs windows > 0, lambda > 0, horizon > 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epsilon_i: Vec<f64>,
    pub epsilon: f64,
    pub start_times: Vec<f64>,
    pub horizon: f64,
    /// Indices of restarts whose forecast diverged and was saturated.
    pub saturated: Vec<usize>,
}

impl EvalReport {
    pub fn from_windows(epsilon_i: Vec<f64>, start_times: Vec<f64>, horizon: f64, saturated: Vec<usize>) -> Self {
        let epsilon = aggregate_epsilon(&epsilon_i);
        EvalReport {
            epsilon_i,
            epsilon,
            start_times,
            horizon,
            saturated,
        }
    }
}

/// `sqrt(mean(eps_i^2))`.
pub fn aggregate_epsilon(eps: &[f64]) -> f64 {
    if eps.is_empty() {
        return 0.0;
    }
    (eps.iter().map(|e| e * e).sum::<f64>() / eps.len() as f64).sqrt()
}

/// Number of grid steps in a forecast of `duration`.
pub fn forecast_steps(duration: f64, dt: f64) -> usize {
    (duration / dt + 1e-9).floor() as usize
}

/// Grid offsets (in steps after `t_train`) of the restart times:
/// `t_i = t_train + i * (span - horizon) / n` for `i = 1..=n`, rounded down
/// onto the grid so that every window ends inside the testing data.
pub fn window_offsets(test_span: f64, dt: f64, cfg: &EvalConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let spacing = (test_span - cfg.horizon) / cfg.n_windows as f64;
    if !(spacing > 0.0) {
        return Err(Error::Config(format!(
            "testing span {test_span} is too short for a forecast horizon of {}",
            cfg.horizon
        )));
    }
    let offsets: Vec<usize> = (1..=cfg.n_windows)
        .map(|i| (i as f64 * spacing / dt + 1e-9).floor() as usize)
        .collect();
    let last = *offsets.last().unwrap() + forecast_steps(cfg.horizon, dt);
    debug_assert!(last as f64 * dt <= test_span + 1e-9);
    Ok(offsets)
}

/// Closed-loop run from `r_init`; returns `y(t) = W_out f_out(r(t))` on the grid.
pub fn forecast(
    reservoir: &Reservoir,
    readout: &Readout,
    r_init: &[f64],
    duration: f64,
    cfg: &StepperConfig,
) -> Result<Trajectory> {
    let (traj, _) = forecast_states(reservoir, readout, r_init, duration, cfg, false)?;
    Ok(traj)
}

/// Like [`forecast`], optionally also returning the reservoir states.
pub fn forecast_states(
    reservoir: &Reservoir,
    readout: &Readout,
    r_init: &[f64],
    duration: f64,
    cfg: &StepperConfig,
    keep_states: bool,
) -> Result<(Trajectory, Vec<Vec<f64>>)> {
    let run = closed_loop(reservoir, readout, r_init, duration, cfg, keep_states)?;
    match run.failure_time {
        Some(time) => Err(Error::IntegrationFailure { time }),
        None => Ok((run.output, run.states)),
    }
}

/// Result of a closed-loop run that stops at the first non-finite state.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    /// Outputs up to the last finite state.
    pub output: Trajectory,
    pub states: Vec<Vec<f64>>,
    /// Time (relative to the start) of the first non-finite state.
    pub failure_time: Option<f64>,
}

pub fn closed_loop(
    reservoir: &Reservoir,
    readout: &Readout,
    r_init: &[f64],
    duration: f64,
    cfg: &StepperConfig,
    keep_states: bool,
) -> Result<ClosedLoopRun> {
    cfg.validate()?;
    let n = reservoir.n();
    if r_init.len() != n {
        return Err(Error::Precondition(format!(
            "initial state has {} entries, reservoir has {n} nodes",
            r_init.len()
        )));
    }
    if readout.w_out.ncols() != n {
        return Err(Error::Precondition("readout does not match reservoir size".into()));
    }
    if !(duration >= 0.0) {
        return Err(Error::Precondition(format!("forecast duration {duration} is negative")));
    }
    let steps = forecast_steps(duration, cfg.dt);
    let mut feat = vec![0.0; n];
    let mut drive = vec![0.0; n];
    let mut r = r_init.to_vec();
    let mut samples = Vec::with_capacity(steps + 1);
    let mut states = Vec::new();
    let mut failure_time = None;
    samples.push(readout.output(&r, &mut feat));
    if keep_states {
        states.push(r.clone());
    }
    let mut stepper = DormandPrince::new(n);
    for k in 0..steps {
        stepper.step(&mut r, cfg.dt, |_, state, out| {
            apply_fout_into(state, readout.fout_split, &mut feat);
            let y = readout.apply(&feat);
            reservoir.input_drive(&y, &mut drive);
            reservoir.derivative(state, &drive, out);
        });
        let y = readout.output(&r, &mut feat);
        if !all_finite(&r) || !all_finite(&y) {
            failure_time = Some((k + 1) as f64 * cfg.dt);
            break;
        }
        samples.push(y);
        if keep_states {
            states.push(r.clone());
        }
    }
    Ok(ClosedLoopRun {
        output: Trajectory {
            t0: 0.0,
            dt: cfg.dt,
            samples,
        },
        states,
        failure_time,
    })
}

/// `(dt * lambda * sum |u - y|^2)^(1/2)` over aligned grids.
pub fn epsilon_single(truth: &Trajectory, pred: &Trajectory, lambda: f64) -> Result<f64> {
    if truth.len() != pred.len() || (truth.dt - pred.dt).abs() > 1e-12 * truth.dt {
        return Err(Error::Precondition(format!(
            "misaligned grids: {} samples at dt {} vs {} samples at dt {}",
            truth.len(),
            truth.dt,
            pred.len(),
            pred.dt
        )));
    }
    let sum: f64 = truth
        .samples
        .iter()
        .zip(&pred.samples)
        .map(|(u, y)| (0..3).map(|c| (u[c] - y[c]).powi(2)).sum::<f64>())
        .sum();
    Ok((truth.dt * lambda * sum).sqrt())
}

/// Score a trained reservoir on the testing window.
///
/// `truth` is the full input signal on the training grid (starting at 0).
pub fn evaluate_climate(
    reservoir: &Reservoir,
    readout: &Readout,
    record: &TrainRecord,
    truth: &Trajectory,
    eval: &EvalConfig,
    cfg: &StepperConfig,
) -> Result<EvalReport> {
    let dt = record.dt;
    let sched = record.schedule;
    let offsets = window_offsets(sched.t_end - sched.t_train, dt, eval)?;
    let horizon_steps = forecast_steps(eval.horizon, dt);
    let train_idx = record.test_first_index - 1;
    let last_needed = train_idx + offsets.last().unwrap() + horizon_steps;
    if truth.len() <= last_needed || (truth.dt - dt).abs() > 1e-12 * dt {
        return Err(Error::Precondition(format!(
            "truth has {} samples at dt {}; evaluation needs index {last_needed} at dt {dt}",
            truth.len(),
            truth.dt
        )));
    }
    let results: Vec<(f64, bool)> = offsets
        .par_iter()
        .map(|&off| {
            let start = train_idx + off;
            let r_init = &record.listening_states_test[off - 1];
            let window = truth.window(start, start + horizon_steps);
            match forecast(reservoir, readout, r_init, eval.horizon, cfg) {
                Ok(mut pred) => {
                    pred.t0 = window.t0;
                    match epsilon_single(&window, &pred, eval.lambda) {
                        Ok(e) if e.is_finite() => (e, false),
                        _ => (SATURATED_EPSILON, true),
                    }
                }
                Err(_) => (SATURATED_EPSILON, true),
            }
        })
        .collect();
    let start_times = offsets.iter().map(|&off| (train_idx + off) as f64 * dt).collect();
    let saturated = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.1)
        .map(|(i, _)| i)
        .collect();
    Ok(EvalReport::from_windows(
        results.into_iter().map(|r| r.0).collect(),
        start_times,
        eval.horizon,
        saturated,
    ))
}
