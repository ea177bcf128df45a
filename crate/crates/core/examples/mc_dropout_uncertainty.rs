//! Trains the segmenter briefly, then scores a held-out image with every
//! acquisition function from the same MC-dropout passes.
//!
//! ```text
//! cargo run -p segal --example mc_dropout_uncertainty
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segal::acquisition::{image_utility, uncertainty_map, AcquisitionFunction};
use segal::data::{extract_contours, generate_synthetic, SyntheticConfig};
use segal::metrics::object_dice;
use segal::segmenter::{mc_predict, train, NetworkConfig, Parameters, TrainConfig, TrainingSample};

fn main() -> segal::Result<()> {
    let dataset = generate_synthetic(&SyntheticConfig {
        train_images: 8,
        test_images: 2,
        height: 32,
        width: 48,
        ..SyntheticConfig::default()
    })?;
    let samples = dataset
        .train()
        .iter()
        .map(|r| {
            let n = r.mask.labels().len();
            TrainingSample::new(&r.image, r.mask.clone(), extract_contours(&r.mask), vec![true; n])
        })
        .collect::<segal::Result<Vec<_>>>()?;

    let net = NetworkConfig {
        base_width: 4,
        ..NetworkConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outcome = train(&Parameters::init(&net)?, &samples, &cfg, &mut rng)?;
    println!(
        "loss {:.4} -> {:.4} over {} epochs",
        outcome.loss_trace[0],
        outcome.loss_trace.last().unwrap(),
        cfg.epochs
    );

    let test = dataset.test()[0];
    let (mean, stack) = mc_predict(&outcome.params, &test.image, 20, 11)?;
    println!("object Dice of the MC mean: {:.3}", object_dice(&mean.argmax(), &test.mask)?);
    for acq in AcquisitionFunction::ALL {
        let map = uncertainty_map(acq, Some(&stack), mean.height(), mean.width(), &mut rng)?;
        let max = map.values().iter().cloned().fold(0.0, f64::max);
        println!(
            "{:<9} summed {:>8.2}  max {:.3}  (ceiling {:.3})",
            acq.name(),
            image_utility(&map),
            max,
            acq.analytic_max(2)
        );
    }
    Ok(())
}
