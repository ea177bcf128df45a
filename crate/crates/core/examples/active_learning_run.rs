//! Runs the full-image and region strategies side by side on a small synthetic
//! task with a simulated annotator, writes the result files and prints the
//! learning curves.
//!
//! ```text
//! cargo run -p segal --example active_learning_run -- /tmp/segal-run
//! ```

use std::path::{Path, PathBuf};

use segal::acquisition::{AcquisitionFunction, RegionScoringConfig};
use segal::data::SyntheticConfig;
use segal::orchestrator::{emit_results, run_experiment, summarize_dir, DatasetSource, ExperimentConfig, Strategy};
use segal::segmenter::{NetworkConfig, TrainConfig};

fn main() -> segal::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segal-run"));
    let base = ExperimentConfig {
        acq_fn: AcquisitionFunction::Entropy,
        initial_labeled: 4,
        images_per_step: 2,
        region: RegionScoringConfig {
            k_w: 8,
            k_h: 8,
            k_s: 4,
            k_v: 1.0,
            m: 16,
        },
        mc_passes: 8,
        restarts: 2,
        query_steps: 3,
        seeds: vec![0, 1],
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            train_images: 16,
            test_images: 6,
            height: 32,
            width: 48,
            ..SyntheticConfig::default()
        }),
        network: NetworkConfig {
            base_width: 3,
            ..NetworkConfig::default()
        },
        training: TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        },
        save_checkpoints: false,
        ..ExperimentConfig::default()
    };
    for strategy in [Strategy::FullImage, Strategy::Region] {
        let cfg = ExperimentConfig {
            strategy,
            ..base.clone()
        };
        let outcome = run_experiment(&cfg, Path::new("."))?;
        emit_results(&outcome, &out.join(strategy.name().to_lowercase()))?;
    }
    print!("{}", summarize_dir(&out)?);
    println!("result files in {}", out.display());
    Ok(())
}
