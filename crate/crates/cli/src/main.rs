mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lowconn_rc::dynamics::SystemKind;
use lowconn_rc::topology::Topology;
use lowconn_rc::Error;

use config::{RunConfig, OUTPUT_ENV};

/// Continuous-time reservoir computers for chaotic forecasting.
///
/// Settings resolve as: built-in defaults, then the `--config` TOML file, then flags.
#[derive(Debug, Parser)]
#[command(name = "lowconn-rc", version, about, long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML file with any of the settings below (keys use snake_case).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory [default: runs]
    #[arg(long, global = true, env = OUTPUT_ENV)]
    pub output_dir: Option<PathBuf>,
    /// Worker threads [default: available cores]
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Input system: lorenz, rossler, double-scroll [default: lorenz]
    #[arg(long, global = true)]
    pub system: Option<SystemKind>,
    /// Topology: general, k1-cycle, k1-cut, cycle, line [default: general]
    #[arg(long, global = true)]
    pub topology: Option<Topology>,
    /// Master seed [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Seed of the time-scale and normalization calibration [default: 0]
    #[arg(long, global = true)]
    pub calibration_seed: Option<u64>,
    /// Reservoir size N [default: 100]
    #[arg(long, global = true)]
    pub nodes: Option<usize>,
    /// Integration step [default: 0.01]
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// End of the discarded transient [default: 100]
    #[arg(long, global = true)]
    pub t_transient: Option<f64>,
    /// End of the training period [default: 200]
    #[arg(long, global = true)]
    pub t_train: Option<f64>,
    /// End of the testing period [default: 300]
    #[arg(long, global = true)]
    pub t_end: Option<f64>,
    /// Number of forecast restarts in the testing period [default: 50]
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    /// Lyapunov exponent used for time rescaling and the error [default: 0.9056]
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Forecast length per restart [default: 1/0.9056 = 1.104]
    #[arg(long, global = true)]
    pub horizon: Option<f64>,
    /// More log output (repeatable)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args, Default)]
pub struct HyperArgs {
    /// Leak rate gamma [default: topology reference value]
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Input connection probability sigma [default: topology reference value]
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Input weight scale rho_in [default: topology reference value]
    #[arg(long)]
    pub rho_in: Option<f64>,
    /// Connections per node, general topology only [default: 3 for general, else 1]
    #[arg(long)]
    pub k: Option<usize>,
    /// Spectral radius before any edge cut [default: topology reference value]
    #[arg(long)]
    pub rho_r: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate the time scale and normalization of a system.
    Calibrate {
        /// Post-transient horizon of the normalization statistics [default: 1000]
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Build one reservoir, fit its readout and save a snapshot.
    Train {
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Score a saved reservoir with the climate error.
    Evaluate {
        /// Snapshot written by `train` or `optimize`
        #[arg(long)]
        snapshot: PathBuf,
        /// Seed of the evaluation input [default: the snapshot seed]
        #[arg(long)]
        input_seed: Option<u64>,
    },
    /// Bayesian optimization of the hyperparameters of one topology.
    Optimize {
        /// Reservoirs evaluated per campaign [default: 100]
        #[arg(long)]
        budget: Option<usize>,
        /// Independent campaigns with seeds seed, seed+1, ... [default: 20]
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Score many fresh reservoirs at fixed hyperparameters.
    Distribution {
        #[command(flatten)]
        hyper: HyperArgs,
        /// Take the hyperparameters from a campaign result JSON
        #[arg(long)]
        campaign: Option<PathBuf>,
        /// Number of reservoirs [default: 200]
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Retrain the readouts of optimized reservoirs on another system.
    Transfer {
        /// Campaign result JSON files; the best reservoir of each is reused
        #[arg(long, required = true, num_args = 1..)]
        campaigns: Vec<PathBuf>,
    },
    /// Long autonomous run of a trained reservoir.
    Freerun {
        #[arg(long)]
        snapshot: PathBuf,
        /// Length of the autonomous run [default: 100]
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Render SVG plots from saved outputs.
    Plot {
        /// Trajectory CSV (t,x,y,z) to draw in the x/z plane
        #[arg(long)]
        freerun: Option<PathBuf>,
        /// Distribution study JSON files to draw as density curves
        #[arg(long, num_args = 1..)]
        distribution: Vec<PathBuf>,
    },
}

impl Cli {
    /// Merge defaults, the config file and flags.
    pub fn resolve(&self) -> lowconn_rc::Result<RunConfig> {
        let mut cfg = match &self.common.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let c = &self.common;
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = c.$field.clone() { cfg.$field = v; } )* };
        }
        set!(output_dir, system, topology, seed, calibration_seed, nodes, dt, t_transient, t_train, t_end, windows, lambda);
        if let Some(h) = c.horizon {
            cfg.horizon = h;
        } else if c.lambda.is_some() {
            cfg.horizon = 1.0 / cfg.lambda;
        }
        let hyper = |cfg: &mut RunConfig, h: &HyperArgs| {
            cfg.gamma = h.gamma.or(cfg.gamma);
            cfg.sigma = h.sigma.or(cfg.sigma);
            cfg.rho_in = h.rho_in.or(cfg.rho_in);
            cfg.k = h.k.or(cfg.k);
            cfg.rho_r = h.rho_r.or(cfg.rho_r);
        };
        match &self.command {
            Command::Calibrate { horizon } => {
                if let Some(h) = horizon {
                    cfg.calibration_horizon = *h;
                }
            }
            Command::Train { hyper: h } => hyper(&mut cfg, h),
            Command::Optimize { budget, repeats } => {
                cfg.budget = budget.unwrap_or(cfg.budget);
                cfg.repeats = repeats.unwrap_or(cfg.repeats);
            }
            Command::Distribution { hyper: h, samples, .. } => {
                hyper(&mut cfg, h);
                cfg.samples = samples.unwrap_or(cfg.samples);
            }
            Command::Freerun { duration, .. } => cfg.duration = duration.unwrap_or(cfg.duration),
            _ => {}
        }
        Ok(cfg)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Precondition(_) | Error::Validation(_) | Error::FormatVersion { .. } => 2,
        Error::IntegrationFailure { .. }
        | Error::Construction(_)
        | Error::EigenNonConvergence { .. }
        | Error::Calibration(_)
        | Error::Numeric(_) => 3,
        Error::Io { .. } | Error::Json { .. } => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            eprintln!("error: invalid configuration: jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match cli.resolve().and_then(|cfg| commands::run(&cli.command, &cfg)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
