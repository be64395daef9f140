//! One trial: build a reservoir, listen to a fresh input, fit the readout and
//! score the climate error.

use serde::{Deserialize, Serialize};

use crate::dynamics::{generate_drive, ChaoticSystem};
use crate::error::Result;
use crate::evaluation::{evaluate_climate, EvalConfig, EvalReport, SATURATED_EPSILON};
use crate::integrate::StepperConfig;
use crate::topology::{HyperParams, Reservoir, DEFAULT_NODES};
use crate::training::{train, Readout, Schedule, TrainRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub n_nodes: usize,
    pub schedule: Schedule,
    pub stepper: StepperConfig,
    pub eval: EvalConfig,
}

impl Default for TrialSettings {
    fn default() -> Self {
        TrialSettings {
            n_nodes: DEFAULT_NODES,
            schedule: Schedule::default(),
            stepper: StepperConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl TrialSettings {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.stepper.validate()?;
        self.eval.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub reservoir: Reservoir,
    pub readout: Readout,
    pub record: TrainRecord,
    pub report: EvalReport,
}

/// Train and score an existing reservoir on a fresh input drawn with `input_seed`.
pub fn fit_and_score(
    reservoir: &Reservoir,
    system: &ChaoticSystem,
    input_seed: u64,
    settings: &TrialSettings,
) -> Result<(Readout, TrainRecord, EvalReport)> {
    settings.validate()?;
    let drive = generate_drive(system, settings.schedule.t_end, settings.stepper.dt, input_seed)?;
    let (record, readout) = train(reservoir, &drive, &settings.schedule, &settings.stepper)?;
    let report = evaluate_climate(
        reservoir,
        &readout,
        &record,
        &drive.trajectory,
        &settings.eval,
        &settings.stepper,
    )?;
    Ok((readout, record, report))
}

/// Build one reservoir from `seed` and score it; the input also uses `seed`.
pub fn run_trial(
    system: &ChaoticSystem,
    hp: &HyperParams,
    seed: u64,
    settings: &TrialSettings,
) -> Result<TrialOutcome> {
    let reservoir = Reservoir::build(hp, settings.n_nodes, seed)?;
    let (readout, record, report) = fit_and_score(&reservoir, system, seed, settings)?;
    Ok(TrialOutcome {
        reservoir,
        readout,
        record,
        report,
    })
}

/// ε of one trial, or the saturation cap together with the failure message.
pub fn trial_epsilon(
    system: &ChaoticSystem,
    hp: &HyperParams,
    seed: u64,
    settings: &TrialSettings,
) -> (f64, Option<String>) {
    match run_trial(system, hp, seed, settings) {
        Ok(out) => (out.report.epsilon, None),
        Err(e) => {
            log::warn!("trial seed {seed} failed: {e}");
            (SATURATED_EPSILON, Some(e.to_string()))
        }
    }
}
