//! Greedy window selection on a hand-made uncertainty landscape, followed by a
//! second round that must avoid the first round's windows.
//!
//! ```text
//! cargo run -p segal --example region_selection
//! ```

use segal::acquisition::{
    image_utility, mask_selected, region_scores, select_images, select_regions, AcquisitionFunction,
    RegionScoringConfig, UncertaintyMap,
};

/// A Gaussian bump of uncertainty centred at `(cy, cx)`.
fn bump(h: usize, w: usize, cy: f64, cx: f64) -> segal::Result<UncertaintyMap> {
    let values = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            (-((r - cy).powi(2) + (c - cx).powi(2)) / 40.0).exp()
        })
        .collect();
    UncertaintyMap::new(h, w, values, AcquisitionFunction::Entropy)
}

fn main() -> segal::Result<()> {
    let pool = [(0, bump(32, 32, 8.0, 8.0)?), (1, bump(32, 32, 20.0, 24.0)?), (2, bump(32, 32, 16.0, 16.0)?.scaled(0.3))];
    let cfg = RegionScoringConfig {
        k_w: 8,
        k_h: 8,
        k_s: 4,
        k_v: 1.0,
        m: 4,
    };
    println!("{} window placements per image", region_scores(&pool[0].1, &cfg)?.len());

    let maps: Vec<_> = pool.iter().map(|(id, m)| (*id, m)).collect();
    let first = select_regions(&maps, &cfg, &[])?;
    for s in &first.items {
        let r = s.region;
        println!("round 1: image {} at ({:>2},{:>2}) score {:.3}", r.image_id, r.top, r.left, s.score);
    }
    let taken: Vec<_> = first.items.iter().map(|s| s.region).collect();
    let second = select_regions(&maps, &cfg, &taken)?;
    for s in &second.items {
        let r = s.region;
        assert!(taken.iter().all(|t| !t.overlaps(&r)));
        println!("round 2: image {} at ({:>2},{:>2}) score {:.3}", r.image_id, r.top, r.left, s.score);
    }

    let masked = mask_selected(&pool[0].1, &taken)?;
    println!(
        "image 0 uncertainty {:.2} before masking, {:.2} after",
        image_utility(&pool[0].1),
        image_utility(&masked)
    );
    let utilities: Vec<(usize, f64)> = pool.iter().map(|(id, m)| (*id, image_utility(m))).collect();
    println!("full-image ranking picks {:?}", select_images(&utilities, 2).items);
    Ok(())
}
