use proptest::prelude::*;

use segal::acquisition::{
    bald_map, entropy_map, select_regions, AcquisitionFunction, Region, RegionScoringConfig, UncertaintyMap,
};
use segal::data::{
    decode_image_png, decode_mask_png, encode_image_png, encode_mask_png, generate_synthetic, load_dataset,
    save_dataset, SyntheticConfig,
};
use segal::grid::{Image, LabelMask, ProbabilityMap, ProbabilityStack};
use segal::orchestrator::ExperimentConfig;

fn uncertainty(h: usize, w: usize, values: Vec<f64>) -> UncertaintyMap {
    UncertaintyMap::new(h, w, values, AcquisitionFunction::Entropy).unwrap()
}

fn simplex(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selected_regions_are_disjoint_and_inside(
        values in proptest::collection::vec(0.0f64..1.0, 2 * 12 * 12),
        k in 2usize..5,
        stride in 1usize..4,
        m in 1usize..8,
        prior_top in 0usize..8,
    ) {
        let maps = [uncertainty(12, 12, values[..144].to_vec()), uncertainty(12, 12, values[144..].to_vec())];
        let pool: Vec<_> = maps.iter().enumerate().map(|(i, m)| (i, m)).collect();
        let cfg = RegionScoringConfig { k_w: k, k_h: k, k_s: stride, k_v: 1.0, m };
        let prior = [Region::new(1, prior_top, prior_top, k, k)];
        let sel = select_regions(&pool, &cfg, &prior).unwrap();
        prop_assert!(sel.items.len() <= m);
        for (i, a) in sel.items.iter().enumerate() {
            prop_assert!(a.region.fits(12, 12));
            prop_assert!(!a.region.overlaps(&prior[0]));
            prop_assert!(a.score > 0.0);
            for b in &sel.items[i + 1..] {
                prop_assert!(!a.region.overlaps(&b.region));
                prop_assert!(a.score >= b.score);
            }
        }
    }

    #[test]
    fn bald_is_bounded_by_predictive_entropy(
        raw in proptest::collection::vec(0.01f64..1.0, 4 * 3 * 3),
    ) {
        let maps: Vec<ProbabilityMap> = raw
            .chunks(3 * 3)
            .map(|c| ProbabilityMap::new(1, 3, 3, c.chunks(3).flat_map(simplex).collect()).unwrap())
            .collect();
        let stack = ProbabilityStack::new(maps).unwrap();
        let mean = segal::grid::mc_average(&stack);
        let bald = bald_map(&stack);
        let h = entropy_map(&mean);
        for (b, e) in bald.values().iter().zip(h.values()) {
            prop_assert!(*b >= 0.0 && *b <= e + 1e-9);
        }
    }

    #[test]
    fn png_round_trips(labels in proptest::collection::vec(0u8..4, 6 * 5), levels in proptest::collection::vec(0u8..=255, 6 * 5)) {
        let mask = LabelMask::new(6, 5, labels).unwrap();
        prop_assert_eq!(decode_mask_png(&encode_mask_png(&mask).unwrap()).unwrap(), mask);
        let image = Image::new(6, 5, 1, levels.iter().map(|v| *v as f64 / 255.0).collect()).unwrap();
        prop_assert_eq!(decode_image_png(&encode_image_png(&image).unwrap()).unwrap(), image);
    }
}

#[test]
fn synthetic_dataset_survives_disk() {
    let cfg = SyntheticConfig {
        train_images: 3,
        test_images: 2,
        height: 16,
        width: 24,
        axis: (3.0, 5.0),
        ..SyntheticConfig::default()
    };
    let ds = generate_synthetic(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let back = load_dataset(&save_dataset(&ds, dir.path()).unwrap()).unwrap();
    assert_eq!(back.records.len(), 5);
    for (a, b) in ds.records.iter().zip(&back.records) {
        assert_eq!((&a.id, a.split), (&b.id, b.split));
        assert_eq!(a.mask, b.mask);
        // PNG quantizes intensities to 8 bits
        for (x, y) in a.image.values().iter().zip(b.image.values()) {
            assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let cfg = ExperimentConfig::read(&path).unwrap();
            cfg.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
            seen += 1;
        }
    }
    assert!(seen > 0);
}
