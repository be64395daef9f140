//! Resolved run configuration: defaults, overridden by a TOML file, overridden by flags.

use std::path::{Path, PathBuf};

use lowconn_rc::bayesopt::BoConfig;
use lowconn_rc::dynamics::{CalibrationConfig, SystemKind, LAMBDA_LORENZ};
use lowconn_rc::evaluation::EvalConfig;
use lowconn_rc::integrate::StepperConfig;
use lowconn_rc::pipeline::TrialSettings;
use lowconn_rc::topology::{HyperParams, Topology, DEFAULT_NODES};
use lowconn_rc::training::Schedule;
use lowconn_rc::{Error, Result};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ENV: &str = "LOWCONN_RC_OUTPUT";

/// Every setting a run can depend on. Field names are the TOML keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemKind,
    pub topology: Topology,
    pub seed: u64,
    pub calibration_seed: u64,
    pub calibration_horizon: f64,
    pub budget: usize,
    pub repeats: usize,
    pub samples: usize,
    pub duration: f64,
    pub output_dir: PathBuf,
    pub nodes: usize,
    pub dt: f64,
    pub t_transient: f64,
    pub t_train: f64,
    pub t_end: f64,
    pub windows: usize,
    pub lambda: f64,
    pub horizon: f64,
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub rho_in: Option<f64>,
    pub k: Option<usize>,
    pub rho_r: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        let sched = Schedule::default();
        RunConfig {
            system: SystemKind::Lorenz,
            topology: Topology::GeneralK,
            seed: 0,
            calibration_seed: 0,
            calibration_horizon: CalibrationConfig::default().sample_horizon,
            budget: 100,
            repeats: 20,
            samples: 200,
            duration: 100.0,
            output_dir: PathBuf::from("runs"),
            nodes: DEFAULT_NODES,
            dt: StepperConfig::default().dt,
            t_transient: sched.t_transient,
            t_train: sched.t_train,
            t_end: sched.t_end,
            windows: eval.n_windows,
            lambda: LAMBDA_LORENZ,
            horizon: eval.horizon,
            gamma: None,
            sigma: None,
            rho_in: None,
            k: None,
            rho_r: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }

    pub fn trial_settings(&self) -> Result<TrialSettings> {
        let s = TrialSettings {
            n_nodes: self.nodes,
            schedule: Schedule {
                t_transient: self.t_transient,
                t_train: self.t_train,
                t_end: self.t_end,
            },
            stepper: StepperConfig::new(self.dt)?,
            eval: EvalConfig {
                n_windows: self.windows,
                lambda: self.lambda,
                horizon: self.horizon,
            },
        };
        if self.nodes < 2 {
            return Err(Error::Config(format!("nodes = {} must be at least 2", self.nodes)));
        }
        s.validate()?;
        Ok(s)
    }

    pub fn calibration(&self) -> CalibrationConfig {
        CalibrationConfig {
            lambda_target: self.lambda,
            dt: self.dt,
            sample_horizon: self.calibration_horizon,
            ..CalibrationConfig::default()
        }
    }

    pub fn bo_config(&self) -> BoConfig {
        BoConfig::default()
    }

    /// Explicit hyperparameters over the topology's reference values.
    pub fn hyperparams(&self) -> Result<HyperParams> {
        let base = HyperParams::lorenz_reference(self.topology);
        let hp = HyperParams::new(
            self.topology,
            self.gamma.unwrap_or(base.gamma),
            self.sigma.unwrap_or(base.sigma),
            self.rho_in.unwrap_or(base.rho_in),
            self.k.unwrap_or(base.k),
            self.rho_r.unwrap_or(base.rho_r),
        );
        if let Some(k) = self.k {
            if !self.topology.has_free_k() && k != 1 {
                return Err(Error::Config(format!("k = {k} is only allowed for the general topology")));
            }
        }
        hp.validate()?;
        hp.check_search_box()?;
        Ok(hp)
    }
}
