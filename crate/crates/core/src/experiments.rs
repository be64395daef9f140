//! Studies built on the trial pipeline: performance distributions at fixed
//! hyperparameters, readout retraining on a new system, and long free runs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayesopt::mean_std;
use crate::dynamics::{ChaoticSystem, SystemKind, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::{closed_loop, SATURATED_EPSILON};
use crate::integrate::StepperConfig;
use crate::persistence::{config_hash, unix_now};
use crate::pipeline::{fit_and_score, trial_epsilon, TrialSettings};
use crate::seeding::{derive_seed, rng_from_seed, Stream};
use crate::topology::{HyperParams, Reservoir, Topology};
use crate::training::Readout;

pub const KDE_BANDWIDTH: f64 = 0.35;
pub const KDE_GRID_POINTS: usize = 512;

/// `<study>_<system>_<topology>_<seed>.<ext>`
pub fn output_name(study: &str, system: SystemKind, topology: Topology, seed: u64, ext: &str) -> String {
    format!("{study}_{system}_{topology}_{seed}.{ext}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Gaussian kernel density estimate of `samples` on `points` evenly spaced
/// values spanning `[min - 3 bw, max + 3 bw]`.
pub fn gaussian_kde(samples: &[f64], bandwidth: f64, points: usize) -> Result<Kde> {
    if samples.is_empty() || !(bandwidth > 0.0) || points < 2 {
        return Err(Error::Precondition(format!(
            "KDE needs samples, a positive bandwidth and >= 2 points (got {}, {bandwidth}, {points})",
            samples.len()
        )));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("KDE samples must be finite".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * bandwidth;
    Ok(kde_on_grid(samples, bandwidth, lo, hi, points))
}

/// Gaussian KDE evaluated on an explicit range.
pub fn kde_on_grid(samples: &[f64], bandwidth: f64, lo: f64, hi: f64, points: usize) -> Kde {
    let norm = 1.0 / (samples.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let density = grid
        .iter()
        .map(|&x| {
            norm * samples
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Kde {
        bandwidth,
        grid,
        density,
    }
}

impl Kde {
    /// Trapezoidal integral of the density over the grid.
    pub fn integral(&self) -> f64 {
        self.grid
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(x, d)| 0.5 * (x[1] - x[0]) * (d[0] + d[1]))
            .sum()
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Percentile bootstrap interval of `median(a) - median(b)`.
pub fn bootstrap_median_difference(a: &[f64], b: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    let mut rng = rng_from_seed(seed);
    let mut diffs: Vec<f64> = (0..resamples)
        .map(|_| {
            let ra: Vec<f64> = (0..a.len()).map(|_| a[rng.gen_range(0..a.len())]).collect();
            let rb: Vec<f64> = (0..b.len()).map(|_| b[rng.gen_range(0..b.len())]).collect();
            median(&ra) - median(&rb)
        })
        .collect();
    diffs.sort_by(|x, y| x.total_cmp(y));
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| diffs[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    (at(tail), at(1.0 - tail))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyProvenance {
    pub master_seed: u64,
    pub settings: TrialSettings,
    pub config_hash: String,
    pub created_unix: u64,
}

impl StudyProvenance {
    fn new<T: Serialize>(master_seed: u64, settings: &TrialSettings, config: &T) -> Self {
        StudyProvenance {
            master_seed,
            settings: *settings,
            config_hash: config_hash(config),
            created_unix: unix_now(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionStudy {
    pub system: SystemKind,
    pub topology: Topology,
    pub hyperparams: HyperParams,
    pub seeds: Vec<u64>,
    /// ε per reservoir, in seed order; failures sit at the saturation cap.
    pub samples: Vec<f64>,
    pub failures: usize,
    pub median: f64,
    pub kde: Kde,
    pub provenance: StudyProvenance,
}

impl DistributionStudy {
    pub fn count_above(&self, threshold: f64) -> usize {
        self.samples.iter().filter(|&&e| e > threshold).count()
    }
}

/// Score `n` fresh reservoirs at fixed hyperparameters.
pub fn run_distribution(
    system: &ChaoticSystem,
    hp: &HyperParams,
    n: usize,
    master_seed: u64,
    settings: &TrialSettings,
) -> Result<DistributionStudy> {
    if n == 0 {
        return Err(Error::Config("distribution needs at least one sample".into()));
    }
    settings.validate()?;
    let seeds: Vec<u64> = (0..n).map(|i| derive_seed(master_seed, Stream::Study, i as u64)).collect();
    let results: Vec<(f64, Option<String>)> = seeds
        .par_iter()
        .map(|&s| trial_epsilon(system, hp, s, settings))
        .collect();
    let samples: Vec<f64> = results.iter().map(|r| r.0).collect();
    let failures = results.iter().filter(|r| r.1.is_some()).count();
    let logs: Vec<f64> = samples.iter().map(|e| e.max(1e-300).log10()).collect();
    let kde = gaussian_kde(&logs, KDE_BANDWIDTH, KDE_GRID_POINTS)?;
    Ok(DistributionStudy {
        system: system.kind(),
        topology: hp.topology,
        hyperparams: *hp,
        median: median(&samples),
        provenance: StudyProvenance::new(master_seed, settings, &(system, hp, n)),
        seeds,
        samples,
        failures,
        kde,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferStudy {
    pub source_system: Option<SystemKind>,
    pub target_system: SystemKind,
    pub topology: Topology,
    pub reservoir_seeds: Vec<u64>,
    pub epsilons: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub epsilon_min: f64,
    pub provenance: StudyProvenance,
}

/// Retrain only the readout of each reservoir on `target` and score it there.
/// The input for reservoir `r` is drawn with `r.seed`.
pub fn run_transfer(
    reservoirs: &[Reservoir],
    source: Option<SystemKind>,
    target: &ChaoticSystem,
    settings: &TrialSettings,
) -> Result<TransferStudy> {
    let topology = reservoirs
        .first()
        .ok_or_else(|| Error::Config("transfer needs at least one reservoir".into()))?
        .topology();
    if reservoirs.iter().any(|r| r.topology() != topology) {
        return Err(Error::Config("transfer reservoirs must share one topology".into()));
    }
    settings.validate()?;
    let epsilons: Vec<f64> = reservoirs
        .par_iter()
        .map(|r| match fit_and_score(r, target, r.seed, settings) {
            Ok((_, _, report)) => report.epsilon,
            Err(e) => {
                log::warn!("transfer of reservoir {} failed: {e}", r.seed);
                SATURATED_EPSILON
            }
        })
        .collect();
    let (mean, std) = mean_std(&epsilons);
    let seeds: Vec<u64> = reservoirs.iter().map(|r| r.seed).collect();
    Ok(TransferStudy {
        source_system: source,
        target_system: target.kind(),
        topology,
        epsilon_min: epsilons.iter().cloned().fold(f64::INFINITY, f64::min),
        provenance: StudyProvenance::new(0, settings, &(target, &seeds)),
        reservoir_seeds: seeds,
        epsilons,
        mean,
        std,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreeRun {
    /// Normalized outputs on the time grid, truncated at divergence.
    pub trajectory: Trajectory,
    pub diverged: bool,
    pub requested_duration: f64,
}

impl FreeRun {
    /// Per-channel `(min, max)` over the run.
    pub fn bounding_box(&self) -> [(f64, f64); 3] {
        bounding_box(&self.trajectory.samples)
    }
}

pub fn bounding_box(samples: &[[f64; 3]]) -> [(f64, f64); 3] {
    std::array::from_fn(|c| {
        samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[c]), hi.max(s[c])))
    })
}

/// Autonomous run of `duration` from `r_init`.
pub fn run_freerun_attractor(
    reservoir: &Reservoir,
    readout: &Readout,
    r_init: &[f64],
    duration: f64,
    cfg: &StepperConfig,
) -> Result<FreeRun> {
    let run = closed_loop(reservoir, readout, r_init, duration, cfg, false)?;
    Ok(FreeRun {
        trajectory: run.output,
        diverged: run.failure_time.is_some(),
        requested_duration: duration,
    })
}

pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["t", "x", "y", "z"]).map_err(|e| csv_error(path, e))?;
    for (i, s) in traj.samples.iter().enumerate() {
        w.serialize((traj.time(i), s[0], s[1], s[2]))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for row in r.deserialize() {
        let (t, x, y, z): (f64, f64, f64, f64) = row.map_err(|e| csv_error(path, e))?;
        times.push(t);
        samples.push([x, y, z]);
    }
    if samples.is_empty() {
        return Err(Error::Validation(vec![format!("{}: no samples", path.display())]));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    Ok(Trajectory {
        t0: times[0],
        dt,
        samples,
    })
}

pub fn write_samples_csv(path: &Path, study: &DistributionStudy) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["index", "seed", "epsilon", "log10_epsilon"])
        .map_err(|e| csv_error(path, e))?;
    for (i, (s, e)) in study.seeds.iter().zip(&study.samples).enumerate() {
        w.serialize((i, s, e, e.max(1e-300).log10()))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(vec![format!("{}: {other:?}", path.display())]),
    }
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 480.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |r: (f64, f64)| {
            let w = if r.1 > r.0 { r.1 - r.0 } else { 1.0 };
            (r.0 - 0.05 * w, r.1 + 0.05 * w)
        };
        Frame { x: pad(x), y: pad(y) }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (SVG_W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        SVG_H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (SVG_H - 2.0 * MARGIN)
    }

    fn open(&self, title: &str, xlabel: &str, ylabel: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            SVG_W - 2.0 * MARGIN,
            SVG_H - 2.0 * MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
            SVG_W / 2.0,
            escape(title)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
            SVG_W / 2.0,
            SVG_H - 12.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
            SVG_H / 2.0,
            SVG_H / 2.0,
            escape(ylabel)
        );
        for (v, anchor_x) in [(self.x.0, true), (self.x.1, true), (self.y.0, false), (self.y.1, false)] {
            let (x, y, anchor) = if anchor_x {
                (self.px(v), SVG_H - MARGIN + 16.0, "middle")
            } else {
                (MARGIN - 6.0, self.py(v) + 4.0, "end")
            };
            let _ = writeln!(
                s,
                r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{v:.2}</text>"#
            );
        }
        s
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>, color: &str, width: f64) -> String {
        let mut path = String::new();
        for (x, y) in pts {
            let _ = write!(path, "{:.2},{:.2} ", self.px(x), self.py(y));
        }
        format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-opacity=\"0.8\"/>\n",
            path.trim_end()
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot of channels `cx` against `cy`; an optional reference is drawn underneath.
pub fn svg_projection(
    traj: &[[f64; 3]],
    reference: Option<&[[f64; 3]]>,
    cx: usize,
    cy: usize,
    title: &str,
) -> String {
    let all: Vec<&[f64; 3]> = traj.iter().chain(reference.into_iter().flatten()).collect();
    let range = |c: usize| {
        all.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[c]), hi.max(s[c])))
    };
    let frame = if all.is_empty() {
        Frame::new((0.0, 1.0), (0.0, 1.0))
    } else {
        Frame::new(range(cx), range(cy))
    };
    let names = ["x", "y", "z"];
    let mut s = frame.open(title, names[cx], names[cy]);
    if let Some(r) = reference {
        s += &frame.polyline(r.iter().map(|p| (p[cx], p[cy])), "#999999", 0.6);
    }
    s += &frame.polyline(traj.iter().map(|p| (p[cx], p[cy])), COLORS[0], 0.8);
    s += "</svg>\n";
    s
}

/// Density curves over `log10 ε`, one per label.
pub fn svg_kde(curves: &[(String, Kde)], title: &str) -> String {
    let xr = curves.iter().flat_map(|c| c.1.grid.iter()).fold(
        (f64::INFINITY, f64::NEG_INFINITY),
        |(lo, hi), &v| (lo.min(v), hi.max(v)),
    );
    let ymax = curves
        .iter()
        .flat_map(|c| c.1.density.iter())
        .cloned()
        .fold(0.0, f64::max);
    let frame = if curves.is_empty() {
        Frame::new((0.0, 1.0), (0.0, 1.0))
    } else {
        Frame::new(xr, (0.0, ymax))
    };
    let mut s = frame.open(title, "log10 epsilon", "density");
    for (i, (label, kde)) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        s += &frame.polyline(kde.grid.iter().cloned().zip(kde.density.iter().cloned()), color, 1.5);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            SVG_W - MARGIN - 110.0,
            MARGIN + 18.0 + 16.0 * i as f64,
            escape(label)
        );
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kde_single_sample_is_one_bump() {
        let kde = gaussian_kde(&[-1.5], KDE_BANDWIDTH, KDE_GRID_POINTS).unwrap();
        let (imax, _) = kde
            .density
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        assert!((kde.grid[imax] + 1.5).abs() < 0.01);
        assert!((kde.integral() - 1.0).abs() < 0.01);
    }

    #[test]
    fn kde_integrates_to_one_over_wide_range() {
        let samples = [-2.0, -1.7, -1.2, 0.3, 3.0];
        let kde = kde_on_grid(&samples, KDE_BANDWIDTH, -10.0, 10.0, 4001);
        assert!((kde.integral() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn median_examples() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn bootstrap_separates_shifted_samples() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        let (lo, hi) = bootstrap_median_difference(&a, &b, 500, 0.95, 1);
        assert!(hi < 0.0 && lo > -1.2);
    }

    #[test]
    fn svg_is_well_formed() {
        let traj = [[0.0, 0.0, 0.0], [1.0, 0.5, 2.0]];
        let s = svg_projection(&traj, None, 0, 2, "a < b");
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a &lt; b"));
    }

    #[test]
    fn output_names() {
        assert_eq!(
            output_name("distribution", SystemKind::Lorenz, Topology::DelayLine, 7, "csv"),
            "distribution_lorenz_line_7.csv"
        );
    }
}
