//! Generates the synthetic ellipse dataset, derives contour targets, resamples
//! one record and writes everything as PNG files with a manifest.
//!
//! ```text
//! cargo run -p segal --example synthetic_data -- /tmp/segal-synth
//! ```

use std::path::PathBuf;

use segal::data::{
    downsample_bilinear, downsample_labels, extract_contours, generate_synthetic, load_dataset, save_dataset,
    write_mask_png, SyntheticConfig,
};

fn main() -> segal::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("segal-synth"));
    let cfg = SyntheticConfig {
        train_images: 8,
        test_images: 4,
        ..SyntheticConfig::default()
    };
    let dataset = generate_synthetic(&cfg)?;
    let train = dataset.train();
    for rec in train.iter().take(3) {
        let fg = rec.mask.labels().iter().filter(|l| **l == 1).count();
        let contour = extract_contours(&rec.mask);
        let band = contour.labels().iter().filter(|l| **l == 1).count();
        println!(
            "{}: {}x{}, foreground {:.1}%, contour band {} px",
            rec.id,
            rec.image.height(),
            rec.image.width(),
            100.0 * fg as f64 / rec.mask.labels().len() as f64,
            band
        );
    }

    let small = downsample_bilinear(&train[0].image, 32, 48)?;
    let small_mask = downsample_labels(&train[0].mask, 32, 48)?;
    println!("resampled to {}x{}", small.height(), small_mask.width());

    let manifest = save_dataset(&dataset, &out)?;
    write_mask_png(&extract_contours(&train[0].mask), &out.join("contours_0.png"))?;
    let reloaded = load_dataset(&manifest)?;
    println!("wrote {} records to {}", reloaded.records.len(), manifest.display());
    Ok(())
}
