//! Active-learning loops, the simulated annotator and result files.

mod config;
mod loops;
mod oracle;
mod output;
mod training;

use std::path::Path;

pub use config::{DatasetSource, ExperimentConfig, Strategy};
pub use loops::{
    full_data_baseline, run_full_image_loop, run_region_loop, run_seed, AcquisitionRow, BaselineRow, LoopContext,
    RunResult, StepRow,
};
pub use oracle::SimulatedOracle;
pub use output::{
    emit_results, median, median_curves, pixels_to_target, read_csv, summarize_dir, write_results_csv, CurvePoint, ExperimentOutcome,
    TargetRow, TARGET_FRACTIONS,
};
pub use training::{
    derive_seed, evaluate, restart_plans, split_validation, train_plans, train_restart_best, training_sample,
    Evaluation, RestartLog, RestartPlan, TrainedModel,
};

use crate::error::Result;

/// Loads the dataset, runs every seed and, if enabled, the full-data baseline.
/// Relative manifest paths resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dataset = cfg.dataset.load(base)?;
    cfg.validate_for(&dataset)?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    let mut baselines = Vec::new();
    for &seed in &cfg.seeds {
        results.push(run_seed(cfg, &dataset, seed)?);
        if cfg.baseline {
            baselines.push(full_data_baseline(cfg, &dataset, seed)?.0);
        }
    }
    Ok(ExperimentOutcome {
        config: cfg.clone(),
        results,
        baselines,
    })
}

#[cfg(test)]
mod tests;
