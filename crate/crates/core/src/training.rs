//! Listening run and readout fit.
//!
//! The reservoir starts at `r = 0` and is driven over the whole schedule. The
//! transient is dropped, the training window supplies `(f_out(r), u)` pairs for
//! ridge regression, and the states of the testing window are kept for the
//! forecast restarts.
//!
//! The ridge parameter is chosen by leave-one-out cross-validation using the
//! hat-matrix identity `e_loo_i = e_i / (1 - h_ii)`, evaluated for every grid
//! value from a single eigendecomposition of the Gram matrix.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{drive_reservoir, signal_window, DriveSignal, StepperConfig};
use crate::topology::Reservoir;

/// Transient, training and testing boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub t_transient: f64,
    pub t_train: f64,
    pub t_end: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            t_transient: 100.0,
            t_train: 200.0,
            t_end: 300.0,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.t_transient && self.t_transient < self.t_train && self.t_train < self.t_end) {
            return Err(Error::Config(format!(
                "schedule must satisfy 0 <= transient < train < end, got {} / {} / {}",
                self.t_transient, self.t_train, self.t_end
            )));
        }
        Ok(())
    }
}

/// `10^-5, 10^-4, ..., 10^5`.
pub fn alpha_grid() -> Vec<f64> {
    (-5..=5).map(|e| 10f64.powi(e)).collect()
}

/// Readout nonlinearity: the first `split` nodes pass through, the rest are squared.
pub fn apply_fout(r: &[f64], split: usize) -> Vec<f64> {
    let mut out = vec![0.0; r.len()];
    apply_fout_into(r, split, &mut out);
    out
}

#[inline]
pub fn apply_fout_into(r: &[f64], split: usize, out: &mut [f64]) {
    for (i, (o, &v)) in out.iter_mut().zip(r).enumerate() {
        *o = if i < split { v } else { v * v };
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    /// `3 x N` output matrix.
    pub w_out: DMatrix<f64>,
    pub alpha: f64,
    pub fout_split: usize,
    /// Leave-one-out squared error for each grid value, in grid order.
    pub loo_errors: Vec<(f64, f64)>,
    /// Set when the training states were identically zero.
    pub degenerate: bool,
}

impl Readout {
    pub fn zeros(n: usize, fout_split: usize) -> Self {
        Readout {
            w_out: DMatrix::zeros(3, n),
            alpha: alpha_grid()[0],
            fout_split,
            loo_errors: Vec::new(),
            degenerate: true,
        }
    }

    /// `W_out r~` for a feature vector that already went through `f_out`.
    #[inline]
    pub fn apply(&self, features: &[f64]) -> [f64; 3] {
        let n = features.len();
        let mut y = [0.0; 3];
        for (j, &f) in features.iter().enumerate().take(n) {
            let col = self.w_out.column(j);
            y[0] += col[0] * f;
            y[1] += col[1] * f;
            y[2] += col[2] * f;
        }
        y
    }

    /// Output for a raw reservoir state; `buf` is scratch space of length N.
    pub fn output(&self, r: &[f64], buf: &mut [f64]) -> [f64; 3] {
        apply_fout_into(r, self.fout_split, buf);
        self.apply(buf)
    }
}

/// States and targets of one listening run.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    /// `M x N` rows of `f_out(r(t))` over the training window, endpoints included.
    pub states: DMatrix<f64>,
    /// `M x 3` rows of `u(t)` on the same grid.
    pub targets: DMatrix<f64>,
    pub r_end_train: Vec<f64>,
    /// `r(t)` for every grid time in `(t_train, t_end]`.
    pub listening_states_test: Vec<Vec<f64>>,
    /// Grid index (of the input signal) of the first test state.
    pub test_first_index: usize,
    pub dt: f64,
    pub schedule: Schedule,
}

impl TrainRecord {
    pub fn test_time(&self, i: usize) -> f64 {
        (self.test_first_index + i) as f64 * self.dt
    }
}

/// Drive the reservoir from `r(0) = 0` over the whole schedule.
pub fn run_training<S: DriveSignal + ?Sized>(
    reservoir: &Reservoir,
    input: &S,
    schedule: &Schedule,
    cfg: &StepperConfig,
) -> Result<TrainRecord> {
    schedule.validate()?;
    cfg.validate()?;
    if input.t0().abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "training input must start at t = 0, starts at {}",
            input.t0()
        )));
    }
    let (first, steps) = signal_window(input, 0.0, schedule.t_end, cfg.dt)?;
    let i_transient = (schedule.t_transient / cfg.dt).round() as usize;
    let i_train = (schedule.t_train / cfg.dt).round() as usize;
    let n = reservoir.n();
    let rows = i_train - i_transient + 1;
    let mut state_data = Vec::with_capacity(rows * n);
    let mut target_data = Vec::with_capacity(rows * 3);
    let mut listening = Vec::with_capacity(steps - i_train);
    let mut r_end = Vec::new();
    let mut feat = vec![0.0; n];
    let split = reservoir.fout_split;
    drive_reservoir(reservoir, input, &vec![0.0; n], first, steps, cfg.dt, 0.0, |k, r| {
        if k >= i_transient && k <= i_train {
            apply_fout_into(r, split, &mut feat);
            state_data.extend_from_slice(&feat);
            target_data.extend_from_slice(&input.stage_input(k, 0));
            if k == i_train {
                r_end = r.to_vec();
            }
        } else if k > i_train {
            listening.push(r.to_vec());
        }
    })?;
    Ok(TrainRecord {
        states: DMatrix::from_row_slice(rows, n, &state_data),
        targets: DMatrix::from_row_slice(rows, 3, &target_data),
        r_end_train: r_end,
        listening_states_test: listening,
        test_first_index: i_train + 1,
        dt: cfg.dt,
        schedule: *schedule,
    })
}

/// `sum |y - W_out s|^2 + alpha ||W_out||_F^2` over the rows of `states`.
pub fn ridge_objective(states: &DMatrix<f64>, targets: &DMatrix<f64>, w_out: &DMatrix<f64>, alpha: f64) -> f64 {
    let resid = targets - states * w_out.transpose();
    resid.norm_squared() + alpha * w_out.norm_squared()
}

/// Ridge regression of `targets` on `states` with the ridge parameter picked
/// from `alpha_grid` by leave-one-out error (ties go to the earlier value).
pub fn fit_ridge(states: &DMatrix<f64>, targets: &DMatrix<f64>, alpha_grid: &[f64], fout_split: usize) -> Result<Readout> {
    let (m, n) = states.shape();
    if targets.nrows() != m {
        return Err(Error::Precondition(format!(
            "{m} state rows but {} target rows",
            targets.nrows()
        )));
    }
    if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Precondition("ridge grid must be non-empty and positive".into()));
    }
    if states.iter().chain(targets.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite training data".into()));
    }
    let outputs = targets.ncols();
    if states.iter().all(|&v| v == 0.0) {
        log::warn!("training states are identically zero; readout fit is degenerate");
        return Ok(Readout {
            w_out: DMatrix::zeros(outputs, n),
            alpha: alpha_grid[0],
            fout_split,
            loo_errors: alpha_grid.iter().map(|&a| (a, targets.norm_squared())).collect(),
            degenerate: true,
        });
    }

    let gram = states.tr_mul(states);
    let cross = states.tr_mul(targets);
    let eig = gram.symmetric_eigen();
    let lambda: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    let v = eig.eigenvectors;
    let sv = states * &v;
    let sv_sq = sv.map(|x| x * x);
    let proj = v.tr_mul(&cross);

    let mut loo_errors = Vec::with_capacity(alpha_grid.len());
    let mut best: Option<(f64, f64, DMatrix<f64>)> = None;
    for &alpha in alpha_grid {
        let inv = nalgebra::DVector::from_iterator(n, lambda.iter().map(|l| 1.0 / (l + alpha)));
        let mut coeff = proj.clone();
        for (mut row, s) in coeff.row_iter_mut().zip(inv.iter()) {
            row *= *s;
        }
        let fitted = &sv * &coeff;
        let leverage = &sv_sq * &inv;
        let mut err = 0.0;
        for i in 0..m {
            let denom = 1.0 - leverage[i];
            for c in 0..outputs {
                let e = (targets[(i, c)] - fitted[(i, c)]) / denom;
                err += e * e;
            }
        }
        loo_errors.push((alpha, err));
        let better = match &best {
            None => true,
            Some((_, best_err, _)) => err < *best_err,
        };
        if better && err.is_finite() {
            best = Some((alpha, err, coeff));
        }
    }
    let (alpha, _, coeff) = best.ok_or_else(|| Error::Numeric("no finite leave-one-out error on the ridge grid".into()))?;
    let w = &v * coeff;
    Ok(Readout {
        w_out: w.transpose(),
        alpha,
        fout_split,
        loo_errors,
        degenerate: false,
    })
}

/// Listening run followed by the cross-validated ridge fit.
pub fn train<S: DriveSignal + ?Sized>(
    reservoir: &Reservoir,
    input: &S,
    schedule: &Schedule,
    cfg: &StepperConfig,
) -> Result<(TrainRecord, Readout)> {
    let record = run_training(reservoir, input, schedule, cfg)?;
    let readout = fit_ridge(&record.states, &record.targets, &alpha_grid(), reservoir.fout_split)?;
    Ok((record, readout))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fout_examples() {
        assert_eq!(apply_fout(&[1.0, -2.0, 3.0, -4.0], 2), vec![1.0, -2.0, 9.0, 16.0]);
        let r = [0.3, -0.1, 0.7];
        assert_eq!(apply_fout(&r, 3), r.to_vec());
        let out = apply_fout(&[-0.5, 0.2, -0.9, -0.1], 2);
        assert!(out[2..].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn alpha_grid_is_eleven_decades() {
        let g = alpha_grid();
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 1e-5);
        assert_eq!(g[5], 1.0);
        assert_eq!(g[10], 1e5);
    }

    #[test]
    fn solvable_problem_picks_smallest_alpha() {
        // tall identity-like design; target copies column 1
        let m = 40;
        let n = 4;
        let states = DMatrix::from_fn(m, n, |i, j| if i % n == j { 1.0 + (i / n) as f64 * 0.1 } else { 0.0 });
        let targets = DMatrix::from_fn(m, 3, |i, c| if c == 0 { states[(i, 1)] } else { 0.0 });
        let ro = fit_ridge(&states, &targets, &alpha_grid(), n).unwrap();
        assert_eq!(ro.alpha, 1e-5);
        let recon = &states * ro.w_out.transpose();
        assert!((recon - &targets).abs().max() < 1e-4);
    }

    #[test]
    fn zero_states_are_degenerate() {
        let states = DMatrix::zeros(20, 5);
        let targets = DMatrix::from_element(20, 3, 1.0);
        let ro = fit_ridge(&states, &targets, &alpha_grid(), 2).unwrap();
        assert!(ro.degenerate);
        assert!(ro.w_out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let states = DMatrix::from_element(4, 2, f64::NAN);
        let targets = DMatrix::zeros(4, 3);
        assert!(fit_ridge(&states, &targets, &alpha_grid(), 1).is_err());
        let states = DMatrix::from_element(4, 2, 1.0);
        assert!(fit_ridge(&states, &targets, &[], 1).is_err());
        assert!(fit_ridge(&states, &DMatrix::zeros(3, 3), &alpha_grid(), 1).is_err());
    }
}
