//! Drives the annotation service in-process the way a labeling client would:
//! fetch suggestions, look at the overlay, submit labels, wait for the retrain.
//! Labels come from ground truth here; a person would paint them instead.
//!
//! ```text
//! cargo run -p segal-service --example human_in_the_loop
//! ```

use std::path::Path;
use std::time::Duration;

use segal::acquisition::RegionScoringConfig;
use segal::data::SyntheticConfig;
use segal::orchestrator::{DatasetSource, ExperimentConfig};
use segal::segmenter::{NetworkConfig, TrainConfig};
use segal_service::{AnnotationService, AnnotationSubmission, RegionLabels};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::temp_dir().join("segal-session-example");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = ExperimentConfig {
        initial_labeled: 4,
        region: RegionScoringConfig {
            k_w: 8,
            k_h: 8,
            k_s: 4,
            k_v: 1.0,
            m: 6,
        },
        mc_passes: 6,
        restarts: 2,
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            train_images: 12,
            test_images: 4,
            height: 32,
            width: 48,
            ..SyntheticConfig::default()
        }),
        output_dir: out.clone(),
        network: NetworkConfig {
            base_width: 3,
            ..NetworkConfig::default()
        },
        training: TrainConfig {
            epochs: 8,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let service = AnnotationService::open(cfg, Path::new("."))?;
    service.wait_until_trained(Duration::from_secs(600));

    for _ in 0..3 {
        let batch = service.suggestions()?;
        let overlay = service.overlay(batch.regions[0].region.image_id)?;
        println!(
            "{}: {} windows, top score {:.2}; overlay of image {} is {}x{} with {} window(s)",
            batch.batch_id,
            batch.regions.len(),
            batch.regions[0].score,
            overlay.image_id,
            overlay.height,
            overlay.width,
            overlay.regions.len()
        );
        let train = service.dataset().train();
        let regions = batch
            .regions
            .iter()
            .map(|s| {
                let r = s.region;
                let mask = &train[r.image_id].mask;
                RegionLabels {
                    region: r,
                    labels: (0..r.height)
                        .map(|i| (0..r.width).map(|j| mask.get(r.top + i, r.left + j)).collect())
                        .collect(),
                }
            })
            .collect();
        let ack = service.submit(&AnnotationSubmission {
            batch_id: batch.batch_id.clone(),
            regions,
        })?;
        println!("accepted {} windows, {} labeled pixels", ack.accepted_regions, ack.labeled_pixels);
        service.wait_until_trained(Duration::from_secs(600));
        let state = service.state();
        if let Some(m) = &state.metrics {
            println!("step {}: dice {:.3}, brier {:.4}", state.step, m.dice_obj, m.brier);
        }
    }
    println!("session persisted under {}", out.join("session").display());
    Ok(())
}
