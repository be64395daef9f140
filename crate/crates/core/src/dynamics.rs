//! The three chaotic benchmark systems and the input signal they produce.
//!
//! Each system is time-rescaled so that its largest Lyapunov exponent equals
//! the Lorenz value [`LAMBDA_LORENZ`], then each channel is shifted and scaled
//! to zero mean and unit variance. Rössler's `z` channel is replaced by `log z`
//! before the statistics are taken.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{all_finite, grid_steps, hermite, DormandPrince, DriveSignal, STAGE_TIMES};
use crate::seeding::{derive_seed, rng_from_seed, Stream};

/// Largest Lyapunov exponent of Lorenz '63 at the standard parameters.
pub const LAMBDA_LORENZ: f64 = 0.9056;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Lorenz,
    Rossler,
    DoubleScroll,
}

impl SystemKind {
    pub const ALL: [SystemKind; 3] = [
        SystemKind::Lorenz,
        SystemKind::Rossler,
        SystemKind::DoubleScroll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::Rossler => "rossler",
            SystemKind::DoubleScroll => "double-scroll",
        }
    }

    pub fn channel_transform(self) -> [ChannelTransform; 3] {
        use ChannelTransform::*;
        match self {
            SystemKind::Rossler => [Identity, Identity, Log],
            _ => [Identity; 3],
        }
    }

    /// Box `(center, half_width)` that initial conditions are drawn from.
    /// Largest step, in the system's own time, at which fixed-step
    /// integration stays stable on the attractor. The double-scroll
    /// Jacobian reaches about -50 near the peaks of `|V1 - V2|`.
    fn max_raw_step(self) -> f64 {
        match self {
            SystemKind::Lorenz => 0.01,
            SystemKind::Rossler => 0.05,
            SystemKind::DoubleScroll => 0.01,
        }
    }

    /// Raw-coordinate bound that orbits on the attractor never reach.
    fn escape_radius(self) -> f64 {
        match self {
            SystemKind::Lorenz => 500.0,
            SystemKind::Rossler => 500.0,
            SystemKind::DoubleScroll => 10.0,
        }
    }

    fn initial_box(self) -> ([f64; 3], [f64; 3]) {
        match self {
            SystemKind::Lorenz => ([0.0; 3], [1.0; 3]),
            SystemKind::Rossler => ([0.0, 0.0, 0.5], [1.0, 1.0, 0.45]),
            SystemKind::DoubleScroll => ([0.0; 3], [0.5; 3]),
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "lorenz" | "lorenz63" => Ok(SystemKind::Lorenz),
            "rossler" | "rössler" => Ok(SystemKind::Rossler),
            "double-scroll" | "doublescroll" | "dscroll" => Ok(SystemKind::DoubleScroll),
            other => Err(Error::Config(format!(
                "unknown system `{other}` (expected lorenz, rossler or double-scroll)"
            ))),
        }
    }
}

/// Named constants of each vector field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemParams {
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
    },
    Rossler {
        a: f64,
        b: f64,
        c: f64,
    },
    /// Dimensionless double-scroll circuit; state is `(V1, V2, I)`.
    DoubleScroll {
        r1: f64,
        r2: f64,
        r4: f64,
        ir: f64,
        alpha: f64,
    },
}

impl SystemParams {
    pub fn standard(kind: SystemKind) -> Self {
        match kind {
            SystemKind::Lorenz => SystemParams::Lorenz {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            SystemKind::Rossler => SystemParams::Rossler {
                a: 0.2,
                b: 0.2,
                c: 5.7,
            },
            SystemKind::DoubleScroll => SystemParams::DoubleScroll {
                r1: 1.2,
                r2: 3.44,
                r4: 0.193,
                ir: 2.25e-5,
                alpha: 11.6,
            },
        }
    }

    pub fn kind(&self) -> SystemKind {
        match self {
            SystemParams::Lorenz { .. } => SystemKind::Lorenz,
            SystemParams::Rossler { .. } => SystemKind::Rossler,
            SystemParams::DoubleScroll { .. } => SystemKind::DoubleScroll,
        }
    }

    #[inline]
    pub fn field(&self, s: &[f64; 3]) -> [f64; 3] {
        let [x, y, z] = *s;
        match *self {
            SystemParams::Lorenz { sigma, rho, beta } => {
                [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
            }
            SystemParams::Rossler { a, b, c } => [-y - z, x + a * y, b + z * (x - c)],
            SystemParams::DoubleScroll {
                r1,
                r2,
                r4,
                ir,
                alpha,
            } => {
                let dv = x - y;
                let g = dv / r2 + 2.0 * ir * (alpha * dv).sinh();
                [x / r1 - g, g - z, y - r4 * z]
            }
        }
    }

    pub fn jacobian(&self, s: &[f64; 3]) -> [[f64; 3]; 3] {
        let [x, y, z] = *s;
        match *self {
            SystemParams::Lorenz { sigma, rho, beta } => [
                [-sigma, sigma, 0.0],
                [rho - z, -1.0, -x],
                [y, x, -beta],
            ],
            SystemParams::Rossler { a, c, .. } => {
                [[0.0, -1.0, -1.0], [1.0, a, 0.0], [z, 0.0, x - c]]
            }
            SystemParams::DoubleScroll {
                r1,
                r2,
                r4,
                ir,
                alpha,
            } => {
                let dg = 1.0 / r2 + 2.0 * ir * alpha * (alpha * (x - y)).cosh();
                [
                    [1.0 / r1 - dg, dg, 0.0],
                    [dg, -dg, -1.0],
                    [0.0, 1.0, -r4],
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelTransform {
    Identity,
    Log,
}

impl ChannelTransform {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            ChannelTransform::Identity => v,
            ChannelTransform::Log => v.ln(),
        }
    }

    #[inline]
    pub fn invert(self, v: f64) -> f64 {
        match self {
            ChannelTransform::Identity => v,
            ChannelTransform::Log => v.exp(),
        }
    }
}

/// A benchmark system together with its time rescaling and normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaoticSystem {
    pub params: SystemParams,
    pub time_scale: f64,
    pub channel_transform: [ChannelTransform; 3],
    pub norm_shift: [f64; 3],
    pub norm_scale: [f64; 3],
}

impl ChaoticSystem {
    /// Standard constants, no rescaling, identity normalization.
    pub fn uncalibrated(kind: SystemKind) -> Self {
        ChaoticSystem {
            params: SystemParams::standard(kind),
            time_scale: 1.0,
            channel_transform: kind.channel_transform(),
            norm_shift: [0.0; 3],
            norm_scale: [1.0; 3],
        }
    }

    pub fn kind(&self) -> SystemKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.time_scale > 0.0 && self.time_scale.is_finite()) {
            problems.push(format!("time_scale must be positive, got {}", self.time_scale));
        }
        for (i, s) in self.norm_scale.iter().enumerate() {
            if !(*s > 0.0 && s.is_finite()) {
                problems.push(format!("norm_scale[{i}] must be positive, got {s}"));
            }
        }
        if self.channel_transform != self.kind().channel_transform() {
            problems.push(format!(
                "channel transform {:?} does not match {}",
                self.channel_transform,
                self.kind()
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(problems))
        }
    }

    /// Time-rescaled vector field.
    #[inline]
    pub fn field(&self, s: &[f64; 3]) -> [f64; 3] {
        let f = self.params.field(s);
        [
            self.time_scale * f[0],
            self.time_scale * f[1],
            self.time_scale * f[2],
        ]
    }

    /// Map a raw state to the normalized reservoir input `u`.
    #[inline]
    pub fn observe(&self, s: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| {
            (self.channel_transform[i].apply(s[i]) - self.norm_shift[i]) / self.norm_scale[i]
        })
    }

    /// Inverse of [`observe`](Self::observe).
    pub fn unobserve(&self, u: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|i| {
            self.channel_transform[i].invert(u[i] * self.norm_scale[i] + self.norm_shift[i])
        })
    }

    /// Substeps used to advance the system over one grid step of `dt`.
    pub fn substeps(&self, dt: f64) -> usize {
        let raw = self.time_scale * dt / self.kind().max_raw_step();
        ((raw - 1e-9).ceil() as usize).max(1)
    }

    /// Uniform draw from the system's initial box, redrawn while the orbit
    /// from it leaves the escape radius within `SCREEN_TIME` raw units.
    pub fn initial_condition(&self, rng: &mut ChaCha8Rng) -> [f64; 3] {
        let kind = self.kind();
        let (center, half) = kind.initial_box();
        let mut s0 = [0.0; 3];
        for _ in 0..MAX_DRAWS {
            s0 = std::array::from_fn(|i| center[i] + half[i] * rng.gen_range(-1.0..=1.0));
            if self.stays_bounded(s0) {
                break;
            }
        }
        s0
    }

    fn stays_bounded(&self, mut s: [f64; 3]) -> bool {
        let h = self.kind().max_raw_step();
        let bound = self.kind().escape_radius();
        let mut stepper = DormandPrince::new(3);
        for _ in 0..(SCREEN_TIME / h).ceil() as usize {
            stepper.step(&mut s, h, |_, y, dy| dy.copy_from_slice(&self.params.field(&[y[0], y[1], y[2]])));
            if !s.iter().all(|v| v.abs() < bound) {
                return false;
            }
        }
        true
    }
}

const SCREEN_TIME: f64 = 200.0;
const MAX_DRAWS: usize = 64;

/// Right-hand side of the chosen system before time rescaling.
pub fn raw_vector_field(system: &ChaoticSystem, state: &[f64; 3]) -> [f64; 3] {
    system.params.field(state)
}

/// Uniformly sampled three-channel signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub samples: Vec<[f64; 3]>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Grid index of time `t`, if `t` lies on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = ((t - self.t0) / self.dt).round();
        if k < 0.0 || k as usize >= self.samples.len() {
            return None;
        }
        if (k * self.dt - (t - self.t0)).abs() > 1e-9 * t.abs().max(1.0) {
            return None;
        }
        Some(k as usize)
    }

    /// Sub-trajectory of samples `start..=end`.
    pub fn window(&self, start: usize, end: usize) -> Trajectory {
        Trajectory {
            t0: self.time(start),
            dt: self.dt,
            samples: self.samples[start..=end].to_vec(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Precondition("trajectory has no samples".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Precondition(format!("trajectory dt = {}", self.dt)));
        }
        Ok(())
    }
}

/// Input signal produced by integrating a system alongside the reservoir.
///
/// Besides the grid samples this keeps the normalized system state at the
/// interior Dormand–Prince stages of every step, so a reservoir stepped with
/// the same tableau sees exactly what it would see if system and reservoir
/// were integrated as one augmented ODE.
#[derive(Debug, Clone)]
pub struct DriveInput {
    pub trajectory: Trajectory,
    stages: Vec<[[f64; 3]; 5]>,
}

impl DriveInput {
    pub fn into_trajectory(self) -> Trajectory {
        self.trajectory
    }
}

impl DriveSignal for DriveInput {
    fn t0(&self) -> f64 {
        self.trajectory.t0
    }

    fn dt(&self) -> f64 {
        self.trajectory.dt
    }

    fn len(&self) -> usize {
        self.trajectory.samples.len()
    }

    #[inline]
    fn stage_input(&self, step: usize, stage: usize) -> [f64; 3] {
        match stage {
            0 => self.trajectory.samples[step],
            6 => self.trajectory.samples[step + 1],
            s => self.stages[step][s - 1],
        }
    }
}

/// Integrate `system` from a seeded random initial condition over `[0, t_end]`
/// and return the normalized input together with its stage values.
pub fn generate_drive(
    system: &ChaoticSystem,
    t_end: f64,
    dt: f64,
    rng_seed: u64,
) -> Result<DriveInput> {
    system.validate()?;
    let steps = grid_steps(0.0, t_end, dt)?;
    let mut rng = rng_from_seed(derive_seed(rng_seed, Stream::InitialCondition, 0));
    let mut state = system.initial_condition(&mut rng);
    let mut stepper = DormandPrince::new(3);
    let mut samples = Vec::with_capacity(steps + 1);
    let mut stages = Vec::with_capacity(steps);
    samples.push(system.observe(&state));
    let mut buf = [[0.0; 3]; 5];
    let m = system.substeps(dt);
    let h = dt / m as f64;
    let mut fine: Vec<([f64; 3], [f64; 3])> = Vec::with_capacity(m + 1);
    for n in 0..steps {
        if m == 1 {
            stepper.step(&mut state, dt, |stage, s, ds| {
                let s3 = [s[0], s[1], s[2]];
                if (1..=5).contains(&stage) {
                    buf[stage - 1] = system.observe(&s3);
                }
                ds.copy_from_slice(&system.field(&s3));
            });
        } else {
            // stage inputs from the Hermite interpolant of the substeps
            fine.clear();
            fine.push((state, system.field(&state)));
            for _ in 0..m {
                stepper.step(&mut state, h, |_, s, ds| {
                    ds.copy_from_slice(&system.field(&[s[0], s[1], s[2]]))
                });
                fine.push((state, system.field(&state)));
            }
            for (k, b) in buf.iter_mut().enumerate() {
                let x = STAGE_TIMES[k + 1] * m as f64;
                let j = (x.floor() as usize).min(m - 1);
                let (a, c) = (&fine[j], &fine[j + 1]);
                *b = system.observe(&hermite(&a.0, &a.1, &c.0, &c.1, h, x - j as f64));
            }
        }
        let u = system.observe(&state);
        if !all_finite(&state) || !all_finite(&u) || !buf.iter().all(|b| all_finite(b)) {
            return Err(Error::IntegrationFailure {
                time: (n + 1) as f64 * dt,
            });
        }
        samples.push(u);
        stages.push(buf);
    }
    Ok(DriveInput {
        trajectory: Trajectory {
            t0: 0.0,
            dt,
            samples,
        },
        stages,
    })
}

/// Normalized input `u(t)` sampled every `dt` on `[0, t_end]`.
pub fn generate_input(
    system: &ChaoticSystem,
    t_end: f64,
    dt: f64,
    rng_seed: u64,
) -> Result<Trajectory> {
    Ok(generate_drive(system, t_end, dt, rng_seed)?.into_trajectory())
}

/// Raw (untransformed, unnormalized) states of the time-rescaled system.
pub fn integrate_raw(
    system: &ChaoticSystem,
    state0: [f64; 3],
    duration: f64,
    dt: f64,
) -> Result<Vec<[f64; 3]>> {
    let steps = grid_steps(0.0, duration, dt)?;
    let mut stepper = DormandPrince::new(3);
    let mut state = state0;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(state);
    let m = system.substeps(dt);
    let h = dt / m as f64;
    for n in 0..steps {
        for _ in 0..m {
            stepper.step(&mut state, h, |_, s, ds| {
                ds.copy_from_slice(&system.field(&[s[0], s[1], s[2]]))
            });
        }
        if !all_finite(&state) {
            return Err(Error::IntegrationFailure {
                time: (n + 1) as f64 * dt,
            });
        }
        out.push(state);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub dt: f64,
    pub transient: f64,
    pub horizon: f64,
    pub renorm_interval: f64,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        LyapunovConfig {
            dt: 0.01,
            transient: 100.0,
            horizon: 1000.0,
            renorm_interval: 1.0,
        }
    }
}

/// Largest Lyapunov exponent of the time-rescaled system.
///
/// Benettin's method on the tangent flow: a single tangent vector is carried
/// with the variational equation and renormalized every `renorm_interval`.
pub fn max_lyapunov(system: &ChaoticSystem, cfg: &LyapunovConfig, seed: u64) -> Result<f64> {
    let renorm_steps = grid_steps(0.0, cfg.renorm_interval, cfg.dt)?.max(1);
    let transient_steps = grid_steps(0.0, cfg.transient, cfg.dt)?;
    let blocks = (grid_steps(0.0, cfg.horizon, cfg.dt)? / renorm_steps).max(1);
    if blocks < 10 {
        return Err(Error::Calibration(format!(
            "horizon {} holds fewer than 10 renormalization intervals",
            cfg.horizon
        )));
    }
    let mut rng = rng_from_seed(seed);
    let s0 = system.initial_condition(&mut rng);
    let ts = system.time_scale;
    let params = system.params;

    let mut y = [s0[0], s0[1], s0[2], 0.0, 0.0, 0.0];
    let mut stepper = DormandPrince::new(6);
    let mut augmented = |_: usize, s: &[f64], ds: &mut [f64]| {
        let p = [s[0], s[1], s[2]];
        let f = params.field(&p);
        let j = params.jacobian(&p);
        for i in 0..3 {
            ds[i] = ts * f[i];
            ds[3 + i] = ts * (j[i][0] * s[3] + j[i][1] * s[4] + j[i][2] * s[5]);
        }
    };
    let m = system.substeps(cfg.dt);
    let h = cfg.dt / m as f64;
    for n in 0..transient_steps {
        for _ in 0..m {
            stepper.step(&mut y, h, &mut augmented);
        }
        if !all_finite(&y) {
            return Err(Error::IntegrationFailure {
                time: (n + 1) as f64 * cfg.dt,
            });
        }
    }
    let v: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..=1.0));
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
    for i in 0..3 {
        y[3 + i] = v[i] / norm;
    }
    stepper.reset();

    let mut log_sum = 0.0;
    for b in 0..blocks {
        for _ in 0..renorm_steps * m {
            stepper.step(&mut y, h, &mut augmented);
        }
        let norm = (y[3] * y[3] + y[4] * y[4] + y[5] * y[5]).sqrt();
        if !all_finite(&y) || !(norm > 0.0) {
            return Err(Error::Calibration(format!(
                "tangent vector degenerated after {} renormalizations",
                b
            )));
        }
        log_sum += norm.ln();
        for v in &mut y[3..] {
            *v /= norm;
        }
        stepper.reset();
    }
    Ok(log_sum / (blocks * renorm_steps) as f64 / cfg.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub lambda_target: f64,
    pub dt: f64,
    pub transient: f64,
    /// Post-transient duration used for the normalization statistics.
    pub sample_horizon: f64,
    /// Horizon of each Lyapunov estimate, in rescaled time units.
    pub lyapunov_horizon: f64,
    pub lyapunov_seeds: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            lambda_target: LAMBDA_LORENZ,
            dt: 0.01,
            transient: 100.0,
            sample_horizon: 1000.0,
            lyapunov_horizon: 1000.0,
            lyapunov_seeds: 3,
        }
    }
}

/// Calibrate with default settings apart from target and horizon.
pub fn calibrate_system(
    kind: SystemKind,
    lambda_target: f64,
    sample_horizon: f64,
    rng_seed: u64,
) -> Result<ChaoticSystem> {
    let cfg = CalibrationConfig {
        lambda_target,
        sample_horizon,
        ..CalibrationConfig::default()
    };
    calibrate_with(kind, &cfg, rng_seed)
}

/// Find the time scale that makes the largest Lyapunov exponent equal
/// `cfg.lambda_target`, then measure per-channel mean and standard deviation
/// of the transformed signal.
pub fn calibrate_with(
    kind: SystemKind,
    cfg: &CalibrationConfig,
    rng_seed: u64,
) -> Result<ChaoticSystem> {
    if !(cfg.lambda_target > 0.0) {
        return Err(Error::Config(format!(
            "lambda_target must be positive, got {}",
            cfg.lambda_target
        )));
    }
    let mut system = ChaoticSystem::uncalibrated(kind);
    if kind != SystemKind::Lorenz {
        // Pilot estimate in raw time, then a full estimate on the rescaled
        // field using the working step size.
        let pilot_cfg = LyapunovConfig {
            dt: cfg.dt,
            transient: cfg.transient,
            horizon: 500.0,
            renorm_interval: 1.0,
        };
        let pilot = max_lyapunov(
            &system,
            &pilot_cfg,
            derive_seed(rng_seed, Stream::InitialCondition, 1000),
        )?;
        if !(pilot > 0.0 && pilot.is_finite()) {
            return Err(Error::Calibration(format!(
                "{kind}: pilot exponent {pilot} is not positive"
            )));
        }
        system.time_scale = cfg.lambda_target / pilot;
        let main_cfg = LyapunovConfig {
            dt: cfg.dt,
            transient: cfg.transient,
            horizon: cfg.lyapunov_horizon,
            renorm_interval: 1.0,
        };
        let seeds = cfg.lyapunov_seeds.max(1);
        let mut estimates = Vec::with_capacity(seeds);
        for i in 0..seeds {
            let seed = derive_seed(rng_seed, Stream::InitialCondition, 1001 + i as u64);
            estimates.push(max_lyapunov(&system, &main_cfg, seed)?);
        }
        let mean = estimates.iter().sum::<f64>() / seeds as f64;
        let lo = estimates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(lo > 0.0) || (hi - lo) > 0.1 * mean {
            return Err(Error::Calibration(format!(
                "{kind}: exponent estimates {estimates:?} disagree"
            )));
        }
        system.time_scale *= cfg.lambda_target / mean;
    }

    let mut rng = rng_from_seed(derive_seed(rng_seed, Stream::InitialCondition, 2000));
    let s0 = system.initial_condition(&mut rng);
    let transient_steps = grid_steps(0.0, cfg.transient, cfg.dt)?;
    let states = integrate_raw(&system, s0, cfg.transient + cfg.sample_horizon, cfg.dt)?;
    let tail = &states[transient_steps..];
    let count = tail.len() as f64;
    let mut mean = [0.0; 3];
    for s in tail {
        for i in 0..3 {
            mean[i] += system.channel_transform[i].apply(s[i]);
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = [0.0; 3];
    for s in tail {
        for i in 0..3 {
            let d = system.channel_transform[i].apply(s[i]) - mean[i];
            var[i] += d * d;
        }
    }
    system.norm_shift = mean;
    system.norm_scale = std::array::from_fn(|i| (var[i] / count).sqrt());
    system.validate()?;
    Ok(system)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_field_values() {
        let sys = ChaoticSystem::uncalibrated(SystemKind::Lorenz);
        assert_eq!(raw_vector_field(&sys, &[0.0; 3]), [0.0; 3]);
        let f = raw_vector_field(&sys, &[1.0, 1.0, 1.0]);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 26.0);
        assert!((f[2] - (1.0 - 8.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn double_scroll_is_odd() {
        let sys = ChaoticSystem::uncalibrated(SystemKind::DoubleScroll);
        assert_eq!(raw_vector_field(&sys, &[0.0; 3]), [0.0; 3]);
        for s in [[0.3, -0.2, 0.1], [1.0, 0.5, -2.0], [-0.7, 0.9, 0.4]] {
            let f = raw_vector_field(&sys, &s);
            let g = raw_vector_field(&sys, &[-s[0], -s[1], -s[2]]);
            for i in 0..3 {
                assert!((f[i] + g[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        for kind in SystemKind::ALL {
            let p = SystemParams::standard(kind);
            let s = [0.4, -0.3, 0.8];
            let j = p.jacobian(&s);
            let h = 1e-6;
            for col in 0..3 {
                let mut sp = s;
                let mut sm = s;
                sp[col] += h;
                sm[col] -= h;
                let (fp, fm) = (p.field(&sp), p.field(&sm));
                for row in 0..3 {
                    let fd = (fp[row] - fm[row]) / (2.0 * h);
                    assert!(
                        (fd - j[row][col]).abs() < 1e-6 * (1.0 + fd.abs()),
                        "{kind} J[{row}][{col}]"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_length_input_is_single_sample() {
        for kind in SystemKind::ALL {
            let sys = ChaoticSystem::uncalibrated(kind);
            let traj = generate_input(&sys, 0.0, 0.01, 3).unwrap();
            assert_eq!(traj.len(), 1);
        }
    }

    #[test]
    fn observe_roundtrip() {
        let mut sys = ChaoticSystem::uncalibrated(SystemKind::Rossler);
        sys.norm_shift = [0.1, -0.5, -2.4];
        sys.norm_scale = [5.0, 4.8, 1.8];
        let s = [1.0, -2.0, 0.3];
        let back = sys.unobserve(&sys.observe(&s));
        for i in 0..3 {
            assert!((back[i] - s[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn parse_system_names() {
        assert_eq!("lorenz".parse::<SystemKind>().unwrap(), SystemKind::Lorenz);
        assert_eq!(
            "double_scroll".parse::<SystemKind>().unwrap(),
            SystemKind::DoubleScroll
        );
        assert!("duffing".parse::<SystemKind>().is_err());
    }

    #[test]
    fn validation_rejects_bad_scale() {
        let mut sys = ChaoticSystem::uncalibrated(SystemKind::Lorenz);
        sys.norm_scale[1] = 0.0;
        assert!(sys.validate().is_err());
        let mut sys = ChaoticSystem::uncalibrated(SystemKind::Lorenz);
        sys.channel_transform[2] = ChannelTransform::Log;
        assert!(sys.validate().is_err());
    }
}
