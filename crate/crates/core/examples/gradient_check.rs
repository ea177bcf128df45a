//! Compares the hand-written backward pass against central finite differences
//! on a small random network and sample.
//!
//! ```text
//! cargo run -p segal --example gradient_check
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segal::data::extract_contours;
use segal::grid::{Image, LabelMask};
use segal::segmenter::{
    loss_and_gradient, sample_dropout_mask, sample_loss, LossConfig, NetworkConfig, Parameters, TrainingSample,
};

fn main() -> segal::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = NetworkConfig {
        encoder_blocks: 2,
        base_width: 2,
        ..NetworkConfig::default()
    };
    let (h, w) = (8, 12);
    let params = Parameters::init(&cfg)?;
    let image = Image::new(h, w, 1, (0..h * w).map(|_| rng.gen()).collect())?;
    let labels = LabelMask::new(h, w, (0..h * w).map(|i| u8::from(i % w > 5)).collect())?;
    let sample = TrainingSample::new(&image, labels.clone(), extract_contours(&labels), vec![true; h * w])?;
    let mask = sample_dropout_mask(&cfg, h, w, &mut rng);
    let loss = LossConfig::default();

    let (value, grad) = loss_and_gradient(&params, &sample, Some(&mask), &loss)?;
    println!(
        "{} parameters, loss {:.5} (segmentation {:.5}, contour {:.5})",
        params.len(),
        value.total,
        value.main_ce,
        value.aux_ce
    );

    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus.as_mut_slice()[i] += step;
        let mut minus = params.clone();
        minus.as_mut_slice()[i] -= step;
        let numeric = (sample_loss(&plus, &sample, Some(&mask), &loss)?.total
            - sample_loss(&minus, &sample, Some(&mask), &loss)?.total)
            / (2.0 * step);
        let analytic = grad.as_slice()[i];
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6));
    }
    println!("max relative error over all parameters: {worst:.2e}");
    Ok(())
}
