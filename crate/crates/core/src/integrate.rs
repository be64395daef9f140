//! Fixed-step Dormand–Prince 5(4) integration.
//!
//! Every step advances with the fifth-order solution. The embedded fourth-order
//! solution is only used to report a local error estimate; it never changes the
//! step size. The tableau is first-same-as-last, so after the first step each
//! step costs six right-hand-side evaluations.
//!
//! Driven reservoirs need the input signal at the intermediate stage times
//! `t_n + c_i dt`. [`DriveSignal`] abstracts over where those values come from:
//! a system integrated alongside the reservoir (exact co-integration, see
//! [`crate::dynamics::DriveInput`]) or a stored [`Trajectory`] interpolated with
//! cubic Hermite polynomials.

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::topology::Reservoir;

/// Stage nodes `c_i`.
pub const STAGE_TIMES: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order weights minus embedded fourth-order weights.
const ERR: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Method {
    #[default]
    DormandPrince54,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub method: Method,
}

impl Default for StepperConfig {
    fn default() -> Self {
        StepperConfig {
            dt: 0.01,
            method: Method::DormandPrince54,
        }
    }
}

impl StepperConfig {
    pub fn new(dt: f64) -> Result<Self> {
        let cfg = StepperConfig {
            dt,
            method: Method::DormandPrince54,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Number of fixed steps between `t0` and `t1`.
pub fn grid_steps(t0: f64, t1: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(Error::Precondition(format!("dt must be positive, got {dt}")));
    }
    let span = t1 - t0;
    if !(span >= 0.0) {
        return Err(Error::Precondition(format!("t1 ({t1}) precedes t0 ({t0})")));
    }
    let steps = (span / dt).round();
    if (steps * dt - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "interval [{t0}, {t1}] is not a whole number of steps of {dt}"
        )));
    }
    Ok(steps as usize)
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Dormand–Prince stepper with preallocated stage buffers.
#[derive(Debug, Clone)]
pub struct DormandPrince {
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    fsal: bool,
}

impl DormandPrince {
    pub fn new(dim: usize) -> Self {
        DormandPrince {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            stage: vec![0.0; dim],
            fsal: false,
        }
    }

    /// Forget the cached first stage. Required whenever `y` is modified
    /// outside of [`step`](Self::step).
    pub fn reset(&mut self) {
        self.fsal = false;
    }

    /// Advance `y` by one step of size `dt`.
    ///
    /// `field(stage, y, dy)` writes the derivative at stage `stage` (0..7, see
    /// [`STAGE_TIMES`]). Returns the max-norm of the embedded error estimate.
    pub fn step<F>(&mut self, y: &mut [f64], dt: f64, mut field: F) -> f64
    where
        F: FnMut(usize, &[f64], &mut [f64]),
    {
        let dim = y.len();
        if !self.fsal {
            field(0, y, &mut self.k[0]);
        }
        for s in 1..7 {
            let (done, rest) = self.k.split_at_mut(s);
            let row = &A[s];
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, kj) in done.iter().enumerate() {
                    acc += row[j] * kj[i];
                }
                self.stage[i] = y[i] + dt * acc;
            }
            field(s, &self.stage, &mut rest[0]);
        }
        // The last stage is evaluated at the fifth-order solution.
        y.copy_from_slice(&self.stage);
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut e = 0.0;
            for (w, kj) in ERR.iter().zip(self.k.iter()) {
                e += w * kj[i];
            }
            err = err.max((dt * e).abs());
        }
        self.k.swap(0, 6);
        self.fsal = true;
        err
    }
}

/// States on a fixed grid plus the largest embedded error estimate seen.
#[derive(Debug, Clone)]
pub struct Solution {
    pub t0: f64,
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    pub max_local_error: f64,
}

/// Integrate an autonomous field from `t0` to `t1`, returning every grid state.
pub fn integrate_fixed<F>(
    mut field: F,
    state0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &StepperConfig,
) -> Result<Solution>
where
    F: FnMut(&[f64], &mut [f64]),
{
    cfg.validate()?;
    let steps = grid_steps(t0, t1, cfg.dt)?;
    let mut stepper = DormandPrince::new(state0.len());
    let mut y = state0.to_vec();
    let mut states = Vec::with_capacity(steps + 1);
    states.push(y.clone());
    let mut max_err: f64 = 0.0;
    for n in 0..steps {
        let err = stepper.step(&mut y, cfg.dt, |_, s, ds| field(s, ds));
        if !all_finite(&y) {
            return Err(Error::IntegrationFailure {
                time: t0 + (n + 1) as f64 * cfg.dt,
            });
        }
        max_err = max_err.max(err);
        states.push(y.clone());
    }
    log::trace!("integrate_fixed: {steps} steps, max local error estimate {max_err:.3e}");
    Ok(Solution {
        t0,
        dt: cfg.dt,
        states,
        max_local_error: max_err,
    })
}

/// A three-channel input signal resolvable at Dormand–Prince stage times.
pub trait DriveSignal {
    fn t0(&self) -> f64;
    fn dt(&self) -> f64;
    /// Number of grid samples.
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Input at `t0 + (step + STAGE_TIMES[stage]) * dt`.
    fn stage_input(&self, step: usize, stage: usize) -> [f64; 3];
}

impl DriveSignal for Trajectory {
    fn t0(&self) -> f64 {
        self.t0
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn len(&self) -> usize {
        self.samples.len()
    }

    fn stage_input(&self, step: usize, stage: usize) -> [f64; 3] {
        let c = STAGE_TIMES[stage];
        if c == 0.0 {
            return self.samples[step];
        }
        if c == 1.0 {
            return self.samples[step + 1];
        }
        hermite(
            &self.samples[step],
            &self.slope(step),
            &self.samples[step + 1],
            &self.slope(step + 1),
            self.dt,
            c,
        )
    }
}

/// Cubic Hermite interpolant at fraction `s` of an interval of length `h`
/// with end values `y0`, `y1` and derivatives `f0`, `f1`.
pub(crate) fn hermite(y0: &[f64; 3], f0: &[f64; 3], y1: &[f64; 3], f1: &[f64; 3], h: f64, s: f64) -> [f64; 3] {
    let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
    let h10 = s * (1.0 - s) * (1.0 - s);
    let h01 = s * s * (3.0 - 2.0 * s);
    let h11 = s * s * (s - 1.0);
    std::array::from_fn(|ch| h00 * y0[ch] + h10 * h * f0[ch] + h01 * y1[ch] + h11 * h * f1[ch])
}

impl Trajectory {
    /// Finite-difference derivative at sample `i` (centered in the interior).
    fn slope(&self, i: usize) -> [f64; 3] {
        let n = self.samples.len();
        let s = &self.samples;
        if n < 2 {
            return [0.0; 3];
        }
        let (a, b, span) = if i == 0 {
            (0, 1, 1.0)
        } else if i == n - 1 {
            (n - 2, n - 1, 1.0)
        } else {
            (i - 1, i + 1, 2.0)
        };
        std::array::from_fn(|ch| (s[b][ch] - s[a][ch]) / (span * self.dt))
    }
}

/// Locate `[t0, t1]` on the signal's grid: returns (first sample index, steps).
pub(crate) fn signal_window<S: DriveSignal + ?Sized>(
    input: &S,
    t0: f64,
    t1: f64,
    dt: f64,
) -> Result<(usize, usize)> {
    if (input.dt() - dt).abs() > 1e-12 * dt {
        return Err(Error::Precondition(format!(
            "input sampled at dt = {} but integrating at dt = {dt}",
            input.dt()
        )));
    }
    let steps = grid_steps(t0, t1, dt)?;
    let offset = t0 - input.t0();
    let first = (offset / dt).round();
    if first < 0.0 || (first * dt - offset).abs() > 1e-9 * offset.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "t0 = {t0} is not on the input grid starting at {}",
            input.t0()
        )));
    }
    let first = first as usize;
    if first + steps >= input.len() {
        let end = input.t0() + (input.len().saturating_sub(1)) as f64 * dt;
        return Err(Error::Precondition(format!(
            "input covers [{}, {end}] but integration needs [{t0}, {t1}]",
            input.t0()
        )));
    }
    Ok((first, steps))
}

/// Drive `reservoir` with `input` over `steps` grid steps starting at input
/// sample `first`. `visit(k, r)` is called with the state after `k` steps
/// (`k = 0` is `r0`).
pub(crate) fn drive_reservoir<S, V>(
    reservoir: &Reservoir,
    input: &S,
    r0: &[f64],
    first: usize,
    steps: usize,
    dt: f64,
    t_start: f64,
    mut visit: V,
) -> Result<Vec<f64>>
where
    S: DriveSignal + ?Sized,
    V: FnMut(usize, &[f64]),
{
    let n = reservoir.n();
    if r0.len() != n {
        return Err(Error::Precondition(format!(
            "initial reservoir state has dimension {} but the reservoir has {n} nodes",
            r0.len()
        )));
    }
    let mut stepper = DormandPrince::new(n);
    let mut r = r0.to_vec();
    let mut drive = vec![0.0; n];
    visit(0, &r);
    for k in 0..steps {
        let step = first + k;
        stepper.step(&mut r, dt, |stage, state, out| {
            let u = input.stage_input(step, stage);
            reservoir.input_drive(&u, &mut drive);
            reservoir.derivative(state, &drive, out);
        });
        if !all_finite(&r) {
            return Err(Error::IntegrationFailure {
                time: t_start + (k + 1) as f64 * dt,
            });
        }
        visit(k + 1, &r);
    }
    Ok(r)
}

/// Integrate the driven reservoir over `[t0, t1]` and return `r(t)` on the grid.
pub fn integrate_driven<S: DriveSignal + ?Sized>(
    reservoir: &Reservoir,
    input: &S,
    r0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &StepperConfig,
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let (first, steps) = signal_window(input, t0, t1, cfg.dt)?;
    let mut out = Vec::with_capacity(steps + 1);
    drive_reservoir(reservoir, input, r0, first, steps, cfg.dt, t0, |_, r| {
        out.push(r.to_vec())
    })?;
    Ok(out)
}
