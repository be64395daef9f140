//! Bayesian optimization of reservoir hyperparameters.
//!
//! Inputs are mapped to the unit cube and the surrogate models `log10 ε`.
//! The first proposals come from a Latin hypercube; later ones maximize
//! expected improvement over random candidates followed by a local polish.
//! A proposal depends only on the campaign seed and the history, so a
//! campaign resumed from its log continues exactly as an uninterrupted one.

pub mod gp;
pub mod optim;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ChaoticSystem, SystemKind};
use crate::error::{Error, Result};
use crate::evaluation::SATURATED_EPSILON;
use crate::persistence::{append_jsonl, read_jsonl};
use crate::pipeline::{run_trial, TrialSettings};
use crate::seeding::{derive_seed, rng_from_seed, Stream};
use crate::topology::{
    HyperParams, Range, Topology, GAMMA_RANGE, K_RANGE, RHO_IN_RANGE, RHO_R_RANGE, SIGMA_RANGE,
};
use gp::GaussianProcess;
use optim::{latin_hypercube, nelder_mead};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub topology: Topology,
    pub gamma: Range,
    pub sigma: Range,
    pub rho_in: Range,
    pub k: (usize, usize),
    pub rho_r: Range,
}

impl SearchSpace {
    /// The standard search box for `topology`.
    pub fn new(topology: Topology) -> Self {
        SearchSpace {
            topology,
            gamma: GAMMA_RANGE,
            sigma: SIGMA_RANGE,
            rho_in: RHO_IN_RANGE,
            k: K_RANGE,
            rho_r: RHO_R_RANGE,
        }
    }

    pub fn has_k(&self) -> bool {
        self.topology.has_free_k()
    }

    pub fn dim(&self) -> usize {
        if self.has_k() {
            5
        } else {
            4
        }
    }

    fn k_span(&self) -> f64 {
        (self.k.1 - self.k.0 + 1) as f64
    }

    /// Unit-cube coordinates. Integer `k` maps to the centre of its bin.
    pub fn to_unit(&self, hp: &HyperParams) -> Vec<f64> {
        let lin = |v: f64, r: Range| (v - r.min) / (r.max - r.min);
        let mut x = vec![lin(hp.gamma, self.gamma), lin(hp.sigma, self.sigma), lin(hp.rho_in, self.rho_in)];
        if self.has_k() {
            x.push((hp.k as f64 - self.k.0 as f64 + 0.5) / self.k_span());
        }
        x.push(lin(hp.rho_r, self.rho_r));
        x
    }

    fn k_of(&self, u: f64) -> usize {
        let k = (self.k.0 as f64 - 0.5 + u.clamp(0.0, 1.0) * self.k_span()).round() as usize;
        k.clamp(self.k.0, self.k.1)
    }

    /// Inverse of [`to_unit`](Self::to_unit); coordinates are clamped to the box
    /// and the `k` coordinate is rounded.
    pub fn from_unit(&self, x: &[f64]) -> HyperParams {
        let at = |u: f64, r: Range| r.min + u.clamp(0.0, 1.0) * (r.max - r.min);
        let (k, rho_r) = if self.has_k() {
            (self.k_of(x[3]), x[4])
        } else {
            (1, x[3])
        };
        HyperParams::new(
            self.topology,
            at(x[0], self.gamma),
            at(x[1], self.sigma),
            at(x[2], self.rho_in),
            k,
            at(rho_r, self.rho_r),
        )
    }

    /// Clamp to the cube and move the `k` coordinate to its bin centre.
    pub fn snap(&self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        if self.has_k() {
            x[3] = (self.k_of(x[3]) as f64 - self.k.0 as f64 + 0.5) / self.k_span();
        }
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        hp.topology == self.topology
            && self.gamma.contains(hp.gamma)
            && self.sigma.contains(hp.sigma)
            && self.rho_in.contains(hp.rho_in)
            && self.rho_r.contains(hp.rho_r)
            && hp.k >= self.k.0
            && hp.k <= self.k.1
            && (self.has_k() || hp.k == 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub n_initial: usize,
    pub n_candidates: usize,
    pub n_polish: usize,
    pub xi: f64,
    /// Random restarts of the likelihood maximization, besides the default start.
    pub gp_restarts: usize,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            n_initial: 10,
            n_candidates: 10_000,
            n_polish: 5,
            xi: 0.01,
            gp_restarts: 1,
        }
    }
}

/// One evaluated proposal. `log10_epsilon` is what the surrogate sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub iteration: usize,
    pub params: HyperParams,
    pub epsilon: f64,
    pub log10_epsilon: f64,
    pub seed: u64,
    pub trained: bool,
    pub saturated_windows: usize,
    pub error: Option<String>,
}

impl Observation {
    pub fn new(iteration: usize, params: HyperParams, seed: u64, epsilon: f64) -> Self {
        let epsilon = if epsilon.is_finite() { epsilon } else { SATURATED_EPSILON };
        Observation {
            iteration,
            params,
            epsilon,
            log10_epsilon: epsilon.max(1e-300).log10(),
            seed,
            trained: true,
            saturated_windows: 0,
            error: None,
        }
    }

    pub fn failed(iteration: usize, params: HyperParams, seed: u64, error: String) -> Self {
        Observation {
            trained: false,
            error: Some(error),
            ..Self::new(iteration, params, seed, SATURATED_EPSILON)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub topology: Topology,
    pub system: Option<SystemKind>,
    pub master_seed: u64,
    pub budget: usize,
    pub best_params: HyperParams,
    pub best_epsilon: f64,
    pub best_seed: u64,
    pub best_iteration: usize,
    pub iterations: usize,
    pub history: Vec<Observation>,
}

impl CampaignResult {
    fn from_history(space: &SearchSpace, master_seed: u64, budget: usize, history: Vec<Observation>) -> Result<Self> {
        let best = history
            .iter()
            .min_by(|a, b| a.epsilon.total_cmp(&b.epsilon))
            .ok_or_else(|| Error::Precondition("campaign has no observations".into()))?
            .clone();
        Ok(CampaignResult {
            topology: space.topology,
            system: None,
            master_seed,
            budget,
            best_params: best.params,
            best_epsilon: best.epsilon,
            best_seed: best.seed,
            best_iteration: best.iteration,
            iterations: history.len(),
            history,
        })
    }

    /// Running minimum of ε over the history.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.history
            .iter()
            .scan(f64::INFINITY, |m, o| {
                *m = m.min(o.epsilon);
                Some(*m)
            })
            .collect()
    }
}

/// Seed of the reservoir (and its input) built at `iteration`.
pub fn trial_seed(master_seed: u64, iteration: usize) -> u64 {
    derive_seed(master_seed, Stream::Trial, iteration as u64)
}

/// The next point to evaluate. Depends only on the arguments.
pub fn propose_next(history: &[Observation], space: &SearchSpace, cfg: &BoConfig, master_seed: u64) -> HyperParams {
    let i = history.len();
    if i < cfg.n_initial {
        let mut rng = rng_from_seed(derive_seed(master_seed, Stream::Design, 0));
        let design = latin_hypercube(cfg.n_initial, space.dim(), &mut rng);
        return space.from_unit(&design[i]);
    }
    let mut rng = rng_from_seed(derive_seed(master_seed, Stream::Proposal, i as u64));
    let x: Vec<Vec<f64>> = history.iter().map(|o| space.to_unit(&o.params)).collect();
    let y: Vec<f64> = history.iter().map(|o| o.log10_epsilon).collect();
    let gp = match GaussianProcess::fit(&x, &y, cfg.gp_restarts, &mut rng) {
        Ok(gp) => gp,
        Err(e) => {
            log::warn!("surrogate fit failed at iteration {i} ({e}); proposing at random");
            let u: Vec<f64> = (0..space.dim()).map(|_| rng.gen()).collect();
            return space.from_unit(&u);
        }
    };
    let candidates: Vec<Vec<f64>> = (0..cfg.n_candidates)
        .map(|_| {
            let mut u: Vec<f64> = (0..space.dim()).map(|_| rng.gen()).collect();
            space.snap(&mut u);
            u
        })
        .collect();
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| gp.expected_improvement(c, cfg.xi))
        .collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut best = (candidates[order[0]].clone(), scores[order[0]]);
    for &c in order.iter().take(cfg.n_polish) {
        let neg_ei = |v: &[f64]| {
            let mut s = v.to_vec();
            space.snap(&mut s);
            -gp.expected_improvement(&s, cfg.xi)
        };
        let (mut v, f) = nelder_mead(neg_ei, &candidates[c], 0.05, 100, 1e-10);
        space.snap(&mut v);
        if -f > best.1 {
            best = (v, -f);
        }
    }
    space.from_unit(&best.0)
}

/// Run a budgeted optimization of `objective`, which maps
/// `(params, trial seed, iteration)` to an observation.
///
/// With a `log` path, observations already on disk are reused and every new
/// observation is appended as one JSON line.
pub fn optimize<F>(
    space: &SearchSpace,
    budget: usize,
    master_seed: u64,
    cfg: &BoConfig,
    log: Option<&Path>,
    mut objective: F,
) -> Result<CampaignResult>
where
    F: FnMut(&HyperParams, u64, usize) -> Observation,
{
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let mut history: Vec<Observation> = match log {
        Some(p) if p.exists() => read_jsonl(p)?,
        _ => Vec::new(),
    };
    check_resumed(&history, space, cfg, master_seed)?;
    history.truncate(budget);
    while history.len() < budget {
        let i = history.len();
        let params = propose_next(&history, space, cfg, master_seed);
        let obs = objective(&params, trial_seed(master_seed, i), i);
        log::debug!("iteration {i}: epsilon {:.5} for {params:?}", obs.epsilon);
        if let Some(p) = log {
            append_jsonl(p, &obs)?;
        }
        history.push(obs);
    }
    CampaignResult::from_history(space, master_seed, budget, history)
}

fn check_resumed(history: &[Observation], space: &SearchSpace, cfg: &BoConfig, master_seed: u64) -> Result<()> {
    for (i, o) in history.iter().enumerate() {
        if o.iteration != i || o.seed != trial_seed(master_seed, i) || !space.contains(&o.params) {
            return Err(Error::Config(format!(
                "campaign log entry {i} does not belong to this campaign (seed {master_seed}, topology {})",
                space.topology
            )));
        }
    }
    if let Some(first) = history.first() {
        if first.params != propose_next(&[], space, cfg, master_seed) {
            return Err(Error::Config("campaign log was written with a different design".into()));
        }
    }
    Ok(())
}

/// Score one reservoir realization; failures become saturated observations.
pub fn evaluate_candidate(
    system: &ChaoticSystem,
    params: &HyperParams,
    seed: u64,
    iteration: usize,
    settings: &TrialSettings,
) -> Observation {
    match run_trial(system, params, seed, settings) {
        Ok(out) => {
            let mut o = Observation::new(iteration, *params, seed, out.report.epsilon);
            o.saturated_windows = out.report.saturated.len();
            o
        }
        Err(e) => {
            log::warn!("trial {iteration} (seed {seed}) failed: {e}");
            Observation::failed(iteration, *params, seed, e.to_string())
        }
    }
}

/// Optimize the hyperparameters of `topology` for forecasting `system`.
pub fn run_campaign(
    system: &ChaoticSystem,
    topology: Topology,
    budget: usize,
    master_seed: u64,
    settings: &TrialSettings,
    cfg: &BoConfig,
    log: Option<&Path>,
) -> Result<CampaignResult> {
    settings.validate()?;
    let space = SearchSpace::new(topology);
    let mut result = optimize(&space, budget, master_seed, cfg, log, |p, seed, i| {
        evaluate_candidate(system, p, seed, i, settings)
    })?;
    result.system = Some(system.kind());
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatStats {
    pub topology: Topology,
    pub system: SystemKind,
    pub best_epsilons: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation (divisor `n - 1`).
    pub std: f64,
    pub results: Vec<CampaignResult>,
}

/// Mean and sample standard deviation of `v`.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Independent campaigns, one per seed, run concurrently. With `log_dir`,
/// each campaign keeps its own resumable log there.
pub fn repeat_campaigns(
    system: &ChaoticSystem,
    topology: Topology,
    budget: usize,
    seeds: &[u64],
    settings: &TrialSettings,
    cfg: &BoConfig,
    log_dir: Option<&Path>,
) -> Result<RepeatStats> {
    if seeds.len() < 2 {
        return Err(Error::Config(format!("repeats need at least 2 seeds, got {}", seeds.len())));
    }
    if let Some(dir) = log_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let log = log_dir.map(|d| d.join(campaign_log_name(system.kind(), topology, seed)));
            run_campaign(system, topology, budget, seed, settings, cfg, log.as_deref())
        })
        .collect::<Result<Vec<_>>>()?;
    let best: Vec<f64> = results.iter().map(|r| r.best_epsilon).collect();
    let (mean, std) = mean_std(&best);
    Ok(RepeatStats {
        topology,
        system: system.kind(),
        best_epsilons: best,
        mean,
        std,
        results,
    })
}

pub fn campaign_log_name(system: SystemKind, topology: Topology, seed: u64) -> String {
    format!("optimize_{system}_{topology}_{seed}.jsonl")
}
