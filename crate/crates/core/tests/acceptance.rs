//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Campaign logs, calibrations and studies are cached under
//! `target/acceptance/<settings hash>/`, so an interrupted run resumes where
//! it stopped. Delete that directory to recompute from scratch.

mod common;

use std::fs;
use std::path::{Path, PathBuf};

use common::{report, Verdict};
use lowconn_rc::bayesopt::{campaign_log_name, mean_std, run_campaign, BoConfig, CampaignResult};
use lowconn_rc::dynamics::{CalibrationConfig, ChaoticSystem, SystemKind};
use lowconn_rc::experiments::{bootstrap_median_difference, run_distribution, run_transfer, DistributionStudy};
use lowconn_rc::persistence::{config_hash, load_or_calibrate, read_json, write_json};
use lowconn_rc::pipeline::TrialSettings;
use lowconn_rc::topology::{is_nilpotent, HyperParams, Reservoir, Topology};

const BUDGET: usize = 100;
const REPEATS: u64 = 5;
const TRANSFER_RESERVOIRS: u64 = 20;
const DISTRIBUTION_SAMPLES: usize = 200;
const DETERMINISM_BUDGET: usize = 15;

/// Published mean and spread of the best ε per topology, in `Topology::ALL` order.
const LORENZ: [(f64, f64); 5] = [(0.022, 0.004), (0.024, 0.005), (0.028, 0.005), (0.023, 0.008), (0.024, 0.003)];
const DOUBLE_SCROLL: [(f64, f64); 5] = [(0.029, 0.006), (0.033, 0.007), (0.033, 0.008), (0.033, 0.007), (0.037, 0.01)];
const ROSSLER: [(f64, f64); 5] = [(0.017, 0.005), (0.020, 0.007), (0.018, 0.006), (0.018, 0.006), (0.019, 0.015)];
const BAND: f64 = 3.0;
const TRANSFER_MIN: f64 = 0.06;
const ZERO_RADIUS_EPSILON: f64 = 0.05;

struct Ctx {
    dir: PathBuf,
    settings: TrialSettings,
    bo: BoConfig,
    calibration: CalibrationConfig,
}

impl Ctx {
    fn new() -> Self {
        let settings = TrialSettings::default();
        let bo = BoConfig::default();
        let calibration = CalibrationConfig::default();
        let key = config_hash(&(settings, bo, calibration, env!("CARGO_PKG_VERSION")));
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../target/acceptance").join(&key[..16]);
        fs::create_dir_all(&dir).unwrap();
        Ctx { dir, settings, bo, calibration }
    }

    fn system(&self, kind: SystemKind) -> ChaoticSystem {
        load_or_calibrate(&self.dir.join("cache"), kind, &self.calibration, 0).expect("calibration")
    }

    /// Campaign `seed`; resumes from its log when present.
    fn campaign(&self, sys: &ChaoticSystem, topology: Topology, seed: u64) -> CampaignResult {
        let log = self.dir.join(campaign_log_name(sys.kind(), topology, seed));
        let t = std::time::Instant::now();
        let r = run_campaign(sys, topology, BUDGET, seed, &self.settings, &self.bo, Some(&log)).expect("campaign");
        let secs = t.elapsed().as_secs_f64();
        if secs > 1.0 {
            eprintln!("  campaign {} {topology} seed {seed}: best {:.4} ({secs:.0} s)", sys.kind(), r.best_epsilon);
        }
        r
    }

    fn campaigns(&self, sys: &ChaoticSystem, topology: Topology, seeds: std::ops::Range<u64>) -> Vec<CampaignResult> {
        seeds.map(|s| self.campaign(sys, topology, s)).collect()
    }

    fn distribution(&self, sys: &ChaoticSystem, topology: Topology) -> DistributionStudy {
        let path = self.dir.join(format!("distribution_{topology}.json"));
        if let Ok(s) = read_json::<DistributionStudy>(&path) {
            return s;
        }
        let hp = HyperParams::lorenz_reference(topology);
        let s = run_distribution(sys, &hp, DISTRIBUTION_SAMPLES, 0, &self.settings).expect("distribution");
        write_json(&path, &s).unwrap();
        s
    }
}

fn table_check(name: &str, runs: &[Vec<CampaignResult>], table: &[(f64, f64); 5]) -> Vec<(String, Verdict)> {
    Topology::ALL
        .iter()
        .zip(runs)
        .zip(table)
        .map(|((t, rs), (mean, std))| {
            let best: Vec<f64> = rs.iter().map(|r| r.best_epsilon).collect();
            let (m, s) = mean_std(&best);
            let (lo, hi) = (mean - BAND * std, mean + BAND * std);
            (
                format!("{name} {t}"),
                Verdict::new(
                    m >= lo && m <= hi,
                    format!("mean best ε {m:.4} ± {s:.4} over {} campaigns; band [{lo:.3}, {hi:.3}]", rs.len()),
                ),
            )
        })
        .collect()
}

fn main() {
    let ctx = Ctx::new();
    eprintln!("acceptance cache: {}", ctx.dir.display());
    let mut verdicts = Vec::new();
    let mut record = |label: &str, checks: Vec<(String, Verdict)>| {
        let pass = report(label, &checks);
        verdicts.push((label.to_string(), pass));
    };

    record("5 metric-oracle suite", common::metric_suite());
    record("6 linear-algebra property suite", common::linear_algebra_suite());
    record("7 dynamics suite", common::dynamics_suite());

    let lorenz = ctx.system(SystemKind::Lorenz);
    let rossler = ctx.system(SystemKind::Rossler);
    let scroll = ctx.system(SystemKind::DoubleScroll);

    let lorenz_runs: Vec<_> = Topology::ALL.iter().map(|&t| ctx.campaigns(&lorenz, t, 0..REPEATS)).collect();
    record("1 Lorenz campaign table", table_check("lorenz", &lorenz_runs, &LORENZ));

    let mut zero = Vec::new();
    for (t, runs) in Topology::ALL.iter().zip(&lorenz_runs) {
        if !t.is_cut() {
            continue;
        }
        let mut found = None;
        for r in runs {
            let res = Reservoir::build(&r.best_params, ctx.settings.n_nodes, r.best_seed).unwrap();
            let nil = is_nilpotent(&res.w_r);
            if nil && r.best_epsilon < ZERO_RADIUS_EPSILON {
                found = Some((r.master_seed, r.best_epsilon));
                break;
            }
        }
        zero.push((
            format!("{t} reaches ε < {ZERO_RADIUS_EPSILON} with a nilpotent W_r"),
            Verdict::new(found.is_some(), match found {
                Some((s, e)) => format!("campaign {s}: ε {e:.4}, W_r^N = 0 exactly"),
                None => "no such reservoir".into(),
            }),
        ));
    }
    record("4 zero spectral radius", zero);

    let scroll_runs: Vec<_> = Topology::ALL.iter().map(|&t| ctx.campaigns(&scroll, t, 0..REPEATS)).collect();
    let rossler_runs: Vec<_> = Topology::ALL.iter().map(|&t| ctx.campaigns(&rossler, t, 0..REPEATS)).collect();
    let mut checks = table_check("double-scroll", &scroll_runs, &DOUBLE_SCROLL);
    checks.extend(table_check("rossler", &rossler_runs, &ROSSLER));
    record("2 Rössler and double-scroll campaign tables", checks);

    let general = ctx.campaigns(&lorenz, Topology::GeneralK, 0..TRANSFER_RESERVOIRS);
    let reservoirs: Vec<Reservoir> = general
        .iter()
        .map(|r| Reservoir::build(&r.best_params, ctx.settings.n_nodes, r.best_seed).unwrap())
        .collect();
    let transfer = run_transfer(&reservoirs, Some(SystemKind::Lorenz), &scroll, &ctx.settings).unwrap();
    write_json(&ctx.dir.join("transfer.json"), &transfer).unwrap();
    let native: Vec<f64> = scroll_runs[0].iter().map(|r| r.best_epsilon).collect();
    let (native_mean, _) = mean_std(&native);
    record(
        "3 transfer to double-scroll",
        vec![
            (
                "best transferred reservoir".into(),
                Verdict::new(
                    transfer.epsilon_min <= TRANSFER_MIN,
                    format!("ε_min {:.4} over {} reservoirs (need ≤ {TRANSFER_MIN})", transfer.epsilon_min, reservoirs.len()),
                ),
            ),
            (
                "transfer is worse than optimizing directly".into(),
                Verdict::new(
                    transfer.mean > native_mean,
                    format!("transfer mean {:.4} ± {:.4} vs double-scroll campaigns {native_mean:.4}", transfer.mean, transfer.std),
                ),
            ),
        ],
    );

    let studies: Vec<DistributionStudy> = Topology::ALL.iter().map(|&t| ctx.distribution(&lorenz, t)).collect();
    let (lo, hi) = bootstrap_median_difference(&studies[0].samples, &studies[3].samples, 10_000, 0.95, 0);
    let mut checks = vec![(
        "general median below cycle median".into(),
        Verdict::new(
            hi <= 0.0,
            format!(
                "medians {:.4} vs {:.4}; 95% interval of the difference [{lo:.4}, {hi:.4}]",
                studies[0].median, studies[3].median
            ),
        ),
    )];
    for s in &studies[1..] {
        let n = s.count_above(1.0);
        checks.push((
            format!("{} has a tail above ε = 1", s.topology),
            Verdict::new(n >= 1, format!("{n}/{} samples above 1, median {:.4}", s.samples.len(), s.median)),
        ));
    }
    record("8 distribution study", checks);

    let fresh = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let log = fresh.path().join(name);
        run_campaign(&lorenz, Topology::K1Cycle, DETERMINISM_BUDGET, 77, &ctx.settings, &ctx.bo, Some(&log)).unwrap();
        fs::read(&log).unwrap()
    };
    let (a, b) = (run("a.jsonl"), run("b.jsonl"));
    record(
        "9 determinism",
        vec![(
            format!("two {DETERMINISM_BUDGET}-trial campaigns with seed 77"),
            Verdict::new(a == b, format!("{} vs {} bytes, identical: {}", a.len(), b.len(), a == b)),
        )],
    );

    verdicts.sort();
    println!("\nacceptance summary");
    for (label, pass) in &verdicts {
        println!("{} criterion {label}", if *pass { "PASS" } else { "FAIL" });
    }
    let failed = verdicts.iter().filter(|v| !v.1).count();
    let summary: String = verdicts
        .iter()
        .map(|(l, p)| format!("{} criterion {l}\n", if *p { "PASS" } else { "FAIL" }))
        .collect();
    fs::write(ctx.dir.join("report.txt"), summary).unwrap();
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
