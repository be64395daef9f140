use std::path::{Path, PathBuf};

use lowconn_rc::bayesopt::{campaign_log_name, repeat_campaigns, run_campaign, CampaignResult, RepeatStats};
use lowconn_rc::dynamics::{generate_drive, ChaoticSystem, SystemKind};
use lowconn_rc::evaluation::{evaluate_climate, EvalReport};
use lowconn_rc::experiments::{
    gaussian_kde, kde_on_grid, output_name, read_trajectory_csv, run_distribution, run_freerun_attractor, run_transfer,
    svg_kde, svg_projection, write_samples_csv, write_trajectory_csv, DistributionStudy, Kde, KDE_BANDWIDTH,
    KDE_GRID_POINTS,
};
use lowconn_rc::persistence::{
    config_hash, load_or_calibrate, load_snapshot, read_json, save_snapshot, write_json, Snapshot,
};
use lowconn_rc::pipeline::{fit_and_score, run_trial};
use lowconn_rc::topology::{HyperParams, Reservoir, Topology};
use lowconn_rc::training::{run_training, train};
use lowconn_rc::{Error, Result};
use serde::Serialize;

use crate::config::RunConfig;
use crate::Command;

pub fn run(cmd: &Command, cfg: &RunConfig) -> Result<String> {
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| io(out, e))?;
    let echo = out.join(format!("{}_{}.config.toml", command_name(cmd), cfg.seed));
    std::fs::write(&echo, cfg.to_toml()).map_err(|e| io(&echo, e))?;
    match cmd {
        Command::Calibrate { .. } => calibrate(cfg),
        Command::Train { .. } => train_cmd(cfg),
        Command::Evaluate { snapshot, input_seed } => evaluate(cfg, snapshot, *input_seed),
        Command::Optimize { .. } => optimize(cfg),
        Command::Distribution { campaign, .. } => distribution(cfg, campaign.as_deref()),
        Command::Transfer { campaigns } => transfer(cfg, campaigns),
        Command::Freerun { snapshot, .. } => freerun(cfg, snapshot),
        Command::Plot { freerun, distribution } => plot(cfg, freerun.as_deref(), distribution),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Calibrate { .. } => "calibrate",
        Command::Train { .. } => "train",
        Command::Evaluate { .. } => "evaluate",
        Command::Optimize { .. } => "optimize",
        Command::Distribution { .. } => "distribution",
        Command::Transfer { .. } => "transfer",
        Command::Freerun { .. } => "freerun",
        Command::Plot { .. } => "plot",
    }
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn system_for(cfg: &RunConfig, kind: SystemKind) -> Result<ChaoticSystem> {
    load_or_calibrate(&cfg.output_dir.join("cache"), kind, &cfg.calibration(), cfg.calibration_seed)
}

/// The snapshot's own calibration when it matches the requested system.
fn system_from_snapshot(cfg: &RunConfig, snap: &Snapshot) -> Result<ChaoticSystem> {
    match &snap.system {
        Some(s) if s.kind() == cfg.system => Ok(s.clone()),
        _ => system_for(cfg, cfg.system),
    }
}

fn name(cfg: &RunConfig, study: &str, topology: Topology, ext: &str) -> PathBuf {
    cfg.output_dir.join(output_name(study, cfg.system, topology, cfg.seed, ext))
}

fn calibrate(cfg: &RunConfig) -> Result<String> {
    let system = system_for(cfg, cfg.system)?;
    let path = cfg
        .output_dir
        .join(format!("calibrate_{}_{}.json", cfg.system, cfg.calibration_seed));
    write_json(&path, &system)?;
    Ok(format!(
        "{}: time scale {:.6}, mean {:?}, std {:?} -> {}",
        cfg.system,
        system.time_scale,
        system.norm_shift,
        system.norm_scale,
        path.display()
    ))
}

fn train_cmd(cfg: &RunConfig) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let hp = cfg.hyperparams()?;
    let system = system_for(cfg, cfg.system)?;
    let out = run_trial(&system, &hp, cfg.seed, &settings)?;
    let snap = Snapshot::new(&out.reservoir, Some(&system), Some(&out.readout), config_hash(cfg));
    let path = name(cfg, "train", hp.topology, "json");
    save_snapshot(&snap, &path)?;
    Ok(format!(
        "trained {} reservoir (alpha = {:e}), epsilon = {:.4} -> {}",
        hp.topology,
        out.readout.alpha,
        out.report.epsilon,
        path.display()
    ))
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    system: SystemKind,
    topology: Topology,
    hyperparams: HyperParams,
    seed: u64,
    input_seed: u64,
    epsilon: f64,
    report: &'a EvalReport,
}

fn evaluate(cfg: &RunConfig, snapshot: &Path, input_seed: Option<u64>) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let snap = load_snapshot(snapshot)?;
    let reservoir = snap.reservoir()?;
    let system = system_from_snapshot(cfg, &snap)?;
    let seed = input_seed.unwrap_or(snap.seed);
    let drive = generate_drive(&system, settings.schedule.t_end, settings.stepper.dt, seed)?;
    let (record, readout) = match snap.readout()? {
        Some(r) if snap.system.as_ref().map(|s| s.kind()) == Some(system.kind()) => {
            (run_training(&reservoir, &drive, &settings.schedule, &settings.stepper)?, r)
        }
        _ => train(&reservoir, &drive, &settings.schedule, &settings.stepper)?,
    };
    let report = evaluate_climate(&reservoir, &readout, &record, &drive.trajectory, &settings.eval, &settings.stepper)?;
    let path = cfg.output_dir.join(output_name("evaluate", system.kind(), reservoir.topology(), seed, "json"));
    write_json(
        &path,
        &EvalOutput {
            system: system.kind(),
            topology: reservoir.topology(),
            hyperparams: reservoir.hyperparams,
            seed: reservoir.seed,
            input_seed: seed,
            epsilon: report.epsilon,
            report: &report,
        },
    )?;
    Ok(format!(
        "epsilon = {:.4} over {} windows ({} saturated) -> {}",
        report.epsilon,
        report.epsilon_i.len(),
        report.saturated.len(),
        path.display()
    ))
}

fn save_best(cfg: &RunConfig, system: &ChaoticSystem, result: &CampaignResult) -> Result<PathBuf> {
    let settings = cfg.trial_settings()?;
    let out = run_trial(system, &result.best_params, result.best_seed, &settings)?;
    let snap = Snapshot::new(&out.reservoir, Some(system), Some(&out.readout), config_hash(cfg));
    let path = cfg.output_dir.join(output_name(
        "snapshot",
        system.kind(),
        result.topology,
        result.master_seed,
        "json",
    ));
    save_snapshot(&snap, &path)?;
    Ok(path)
}

fn optimize(cfg: &RunConfig) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let system = system_for(cfg, cfg.system)?;
    let bo = cfg.bo_config();
    if cfg.repeats <= 1 {
        let log = cfg.output_dir.join(campaign_log_name(cfg.system, cfg.topology, cfg.seed));
        let result = run_campaign(&system, cfg.topology, cfg.budget, cfg.seed, &settings, &bo, Some(&log))?;
        let path = name(cfg, "optimize", cfg.topology, "json");
        write_json(&path, &result)?;
        let snap = save_best(cfg, &system, &result)?;
        return Ok(format!(
            "best ε = {:.4} ({}, {}, seed {}, {} trials) -> {}, {}",
            result.best_epsilon,
            cfg.system,
            cfg.topology,
            cfg.seed,
            result.iterations,
            path.display(),
            snap.display()
        ));
    }
    let seeds: Vec<u64> = (0..cfg.repeats as u64).map(|i| cfg.seed + i).collect();
    let stats: RepeatStats = repeat_campaigns(
        &system,
        cfg.topology,
        cfg.budget,
        &seeds,
        &settings,
        &bo,
        Some(&cfg.output_dir),
    )?;
    for r in &stats.results {
        let path = cfg
            .output_dir
            .join(output_name("optimize", cfg.system, cfg.topology, r.master_seed, "json"));
        write_json(&path, r)?;
        save_best(cfg, &system, r)?;
    }
    let path = name(cfg, "optimize-repeats", cfg.topology, "json");
    write_json(&path, &stats)?;
    let best = stats.best_epsilons.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "best ε = {best:.4}; mean {:.4} ± {:.4} over {} campaigns ({}, {}) -> {}",
        stats.mean,
        stats.std,
        seeds.len(),
        cfg.system,
        cfg.topology,
        path.display()
    ))
}

fn distribution(cfg: &RunConfig, campaign: Option<&Path>) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let hp = match campaign {
        Some(p) => read_json::<CampaignResult>(p)?.best_params,
        None => cfg.hyperparams()?,
    };
    let system = system_for(cfg, cfg.system)?;
    let study = run_distribution(&system, &hp, cfg.samples, cfg.seed, &settings)?;
    let json = name(cfg, "distribution", hp.topology, "json");
    let csv = name(cfg, "distribution", hp.topology, "csv");
    let svg = name(cfg, "distribution", hp.topology, "svg");
    write_json(&json, &study)?;
    write_samples_csv(&csv, &study)?;
    let svg_text = svg_kde(&[(hp.topology.to_string(), study.kde.clone())], &format!("{} on {}", hp.topology, cfg.system));
    std::fs::write(&svg, svg_text).map_err(|e| io(&svg, e))?;
    Ok(format!(
        "median ε = {:.4} over {} reservoirs ({} above 1, {} failed) -> {}",
        study.median,
        study.samples.len(),
        study.count_above(1.0),
        study.failures,
        json.display()
    ))
}

fn transfer(cfg: &RunConfig, campaigns: &[PathBuf]) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let mut reservoirs = Vec::new();
    let mut source = None;
    for p in campaigns {
        let c: CampaignResult = read_json(p)?;
        source = source.or(c.system);
        reservoirs.push(Reservoir::build(&c.best_params, settings.n_nodes, c.best_seed)?);
    }
    let target = system_for(cfg, cfg.system)?;
    let study = run_transfer(&reservoirs, source, &target, &settings)?;
    let path = name(cfg, "transfer", study.topology, "json");
    write_json(&path, &study)?;
    Ok(format!(
        "transfer to {}: mean ε = {:.4} ± {:.4}, ε_min = {:.4} over {} reservoirs -> {}",
        cfg.system,
        study.mean,
        study.std,
        study.epsilon_min,
        study.epsilons.len(),
        path.display()
    ))
}

fn freerun(cfg: &RunConfig, snapshot: &Path) -> Result<String> {
    let settings = cfg.trial_settings()?;
    let snap = load_snapshot(snapshot)?;
    let reservoir = snap.reservoir()?;
    let system = system_from_snapshot(cfg, &snap)?;
    let sched = settings.schedule;
    let dt = settings.stepper.dt;
    let drive = generate_drive(&system, sched.t_train + cfg.duration.max(dt), dt, snap.seed)?;
    // listening stops one step past t_train; only r(t_train) is used
    let listen = lowconn_rc::training::Schedule {
        t_end: sched.t_train + dt,
        ..sched
    };
    let (record, fitted) = match snap.readout()? {
        Some(r) if snap.system.as_ref().map(|s| s.kind()) == Some(system.kind()) => {
            (run_training(&reservoir, &drive, &listen, &settings.stepper)?, r)
        }
        _ => {
            let (readout, _, _) = fit_and_score(&reservoir, &system, snap.seed, &settings)?;
            (run_training(&reservoir, &drive, &listen, &settings.stepper)?, readout)
        }
    };
    let run = run_freerun_attractor(&reservoir, &fitted, &record.r_end_train, cfg.duration, &settings.stepper)?;
    let i0 = (sched.t_train / settings.stepper.dt).round() as usize;
    let truth = &drive.trajectory.samples[i0..];
    let mut traj = run.trajectory.clone();
    traj.t0 = sched.t_train;
    let csv = cfg
        .output_dir
        .join(output_name("freerun", system.kind(), reservoir.topology(), snap.seed, "csv"));
    let svg = csv.with_extension("svg");
    write_trajectory_csv(&csv, &traj)?;
    let title = format!("{} reservoir, {} free run", reservoir.topology(), system.kind());
    std::fs::write(&svg, svg_projection(&traj.samples, Some(truth), 0, 2, &title)).map_err(|e| io(&svg, e))?;
    let status = if run.diverged {
        format!("diverged after {:.2}", (traj.len() - 1) as f64 * settings.stepper.dt)
    } else {
        "stayed finite".to_string()
    };
    Ok(format!(
        "free run of {} time units {status} -> {}, {}",
        cfg.duration,
        csv.display(),
        svg.display()
    ))
}

fn plot(cfg: &RunConfig, freerun: Option<&Path>, distributions: &[PathBuf]) -> Result<String> {
    if freerun.is_none() && distributions.is_empty() {
        return Err(Error::Config("plot needs --freerun or --distribution".into()));
    }
    let mut written = Vec::new();
    if let Some(p) = freerun {
        let traj = read_trajectory_csv(p)?;
        let stem = p.file_stem().map_or("freerun".into(), |s| s.to_string_lossy().into_owned());
        let svg = cfg.output_dir.join(format!("plot_{stem}.svg"));
        std::fs::write(&svg, svg_projection(&traj.samples, None, 0, 2, &stem)).map_err(|e| io(&svg, e))?;
        written.push(svg);
    }
    if !distributions.is_empty() {
        let studies = distributions
            .iter()
            .map(|p| read_json::<DistributionStudy>(p))
            .collect::<Result<Vec<_>>>()?;
        let logs: Vec<Vec<f64>> = studies
            .iter()
            .map(|s| s.samples.iter().map(|e| e.max(1e-300).log10()).collect())
            .collect();
        // one grid for every curve so they share an axis
        let span = gaussian_kde(&logs.concat(), KDE_BANDWIDTH, KDE_GRID_POINTS)?;
        let (lo, hi) = (span.grid[0], span.grid[KDE_GRID_POINTS - 1]);
        let curves: Vec<(String, Kde)> = studies
            .iter()
            .zip(&logs)
            .map(|(s, l)| (s.topology.to_string(), kde_on_grid(l, KDE_BANDWIDTH, lo, hi, KDE_GRID_POINTS)))
            .collect();
        let svg = cfg.output_dir.join(format!("distribution_{}_plot_{}.svg", cfg.system, cfg.seed));
        std::fs::write(&svg, svg_kde(&curves, "error distribution")).map_err(|e| io(&svg, e))?;
        written.push(svg);
    }
    Ok(format!(
        "wrote {}",
        written.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
    ))
}
