use super::*;
use crate::acquisition::{AcquisitionFunction, RegionScoringConfig};
use crate::data::{generate_synthetic, Dataset, SyntheticConfig};
use crate::segmenter::{NetworkConfig, TrainConfig};

fn synthetic() -> SyntheticConfig {
    SyntheticConfig {
        train_images: 12,
        test_images: 3,
        height: 32,
        width: 32,
        objects: (1, 2),
        axis: (4.0, 7.0),
        seed: 5,
        ..SyntheticConfig::default()
    }
}

fn small(strategy: Strategy, acq_fn: AcquisitionFunction) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        acq_fn,
        initial_labeled: 4,
        images_per_step: 2,
        region: RegionScoringConfig {
            k_w: 8,
            k_h: 8,
            k_s: 4,
            k_v: 1.0,
            m: 3,
        },
        mc_passes: 3,
        restarts: 2,
        query_steps: 2,
        seeds: vec![1],
        dataset: DatasetSource::Synthetic(synthetic()),
        network: NetworkConfig {
            encoder_blocks: 2,
            base_width: 3,
            ..NetworkConfig::default()
        },
        training: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        save_checkpoints: false,
        ..ExperimentConfig::default()
    }
}

fn data() -> Dataset {
    generate_synthetic(&synthetic()).unwrap()
}

#[test]
fn zero_query_steps_gives_initial_row_only() {
    let cfg = ExperimentConfig {
        query_steps: 0,
        ..small(Strategy::Region, AcquisitionFunction::Entropy)
    };
    let run = run_seed(&cfg, &data(), 1).unwrap();
    assert_eq!(run.rows.len(), 1);
    assert_eq!(run.rows[0].step, 0);
    assert_eq!(run.rows[0].labeled_pixels, 4 * 32 * 32);
    assert!(run.acquisitions.is_empty() && run.histograms.is_empty());
    assert_eq!(run.restarts[0].1.len(), 2);
}

#[test]
fn full_image_budget() {
    let cfg = small(Strategy::FullImage, AcquisitionFunction::VarRatio);
    let run = run_full_image_loop(&cfg, &data(), 1).unwrap();
    let budgets: Vec<usize> = run.rows.iter().map(|r| r.labeled_pixels).collect();
    assert_eq!(budgets, vec![4 * 1024, 6 * 1024, 8 * 1024]);
    assert_eq!(run.acquisitions.len(), 4);
    let mut ids: Vec<usize> = run.acquisitions.iter().map(|a| a.image_id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), 4, "an image was acquired twice");
    assert!(run.acquisitions.iter().all(|a| (a.k_h, a.k_w) == (32, 32)));
    assert!(run_region_loop(&cfg, &data(), 1).is_err());
}

#[test]
fn region_budget_and_pseudo_labels() {
    let cfg = small(Strategy::Region, AcquisitionFunction::Bald);
    let run = run_region_loop(&cfg, &data(), 1).unwrap();
    let budgets: Vec<usize> = run.rows.iter().map(|r| r.labeled_pixels).collect();
    assert_eq!(budgets, vec![4 * 1024, 4 * 1024 + 3 * 64, 4 * 1024 + 6 * 64]);
    assert_eq!(run.acquisitions.len(), 6);
    let regions = run.state.selected_regions();
    for (i, a) in regions.iter().enumerate() {
        assert!(regions[i + 1..].iter().all(|b| !a.overlaps(b)));
    }
    // every touched image carries pseudo-labels outside its windows
    for a in &run.acquisitions {
        let ann = run.state.image(a.image_id).unwrap();
        assert!(ann.pseudo_labels.is_some());
    }
    let hist = &run.histograms[0].1;
    assert_eq!(hist.len(), 10);
    assert!((hist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn random_region_loop_runs() {
    let cfg = small(Strategy::Region, AcquisitionFunction::Random);
    let run = run_seed(&cfg, &data(), 3).unwrap();
    assert_eq!(run.rows.len(), 3);
    assert_eq!(run.rows[2].labeled_pixels, 4 * 1024 + 6 * 64);
}

#[test]
fn runs_are_deterministic() {
    let cfg = small(Strategy::Region, AcquisitionFunction::Entropy);
    let a = run_seed(&cfg, &data(), 1).unwrap();
    let b = run_seed(&cfg, &data(), 1).unwrap();
    assert_eq!(a.rows, b.rows);
    assert_eq!(a.acquisitions, b.acquisitions);
    assert_eq!(a.params, b.params);
    let c = run_seed(&cfg, &data(), 2).unwrap();
    assert_ne!(a.acquisitions, c.acquisitions);
}

#[test]
fn experiment_files_round_trip() {
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        query_steps: 1,
        ..small(Strategy::FullImage, AcquisitionFunction::Entropy)
    };
    let outcome = run_experiment(&cfg, std::path::Path::new(".")).unwrap();
    assert_eq!(outcome.baselines.len(), 2);
    assert!(outcome.baselines.iter().all(|b| b.labeled_pixels == 12 * 1024));
    let dir = tempfile::tempdir().unwrap();
    emit_results(&outcome, dir.path()).unwrap();
    let rows: Vec<StepRow> = read_csv(&dir.path().join("results.csv")).unwrap();
    let expected: Vec<StepRow> = outcome.results.iter().flat_map(|r| r.rows.clone()).collect();
    assert_eq!(rows.len(), expected.len());
    for (r, e) in rows.iter().zip(&expected) {
        assert_eq!((r.step, r.seed, r.labeled_pixels), (e.step, e.seed, e.labeled_pixels));
        assert!((r.dice_obj - e.dice_obj).abs() < 1e-12);
    }
    for name in ["acquisition.csv", "reliability_step0.csv", "histogram_step1.csv", "baseline.csv", "config.json"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let saved = ExperimentConfig::read(&dir.path().join("config.json")).unwrap();
    assert_eq!(saved, cfg);
    let text = summarize_dir(dir.path()).unwrap();
    assert!(text.contains("FULL_IMAGE"));
    let rerun = run_experiment(&cfg, std::path::Path::new(".")).unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    emit_results(&rerun, dir2.path()).unwrap();
    assert_eq!(std::fs::read(dir.path().join("results.csv")).unwrap(), std::fs::read(dir2.path().join("results.csv")).unwrap());
}

#[test]
fn median_curves_group_by_step() {
    let cfg = ExperimentConfig {
        seeds: vec![0, 1, 2],
        query_steps: 1,
        baseline: false,
        ..small(Strategy::FullImage, AcquisitionFunction::Entropy)
    };
    let outcome = run_experiment(&cfg, std::path::Path::new(".")).unwrap();
    let rows: Vec<StepRow> = outcome.results.iter().flat_map(|r| r.rows.clone()).collect();
    let curves = median_curves(&rows);
    assert_eq!(curves.len(), 2);
    for c in &curves {
        assert_eq!(c.seeds, 3);
        let mut d: Vec<f64> = rows.iter().filter(|r| r.step == c.step).map(|r| r.dice_obj).collect();
        d.sort_by(f64::total_cmp);
        assert_eq!(c.dice_obj, d[1]);
    }
}
