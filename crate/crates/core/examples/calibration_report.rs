//! Calibration metrics for an overconfident and a calibrated binary predictor
//! on the same labels, with the reliability diagram and Brier decomposition.
//!
//! ```text
//! cargo run -p segal --example calibration_report
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segal::calibration::{calibration_report, reliability_diagram};
use segal::grid::{LabelMask, ProbabilityMap};

fn main() -> segal::Result<()> {
    let (h, w) = (32, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // the true foreground probability varies smoothly across the image
    let truth: Vec<f64> = (0..h * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
    let labels = LabelMask::new(h, w, truth.iter().map(|p| u8::from(rng.gen_bool(*p))).collect())?;

    let as_map = |fg: &dyn Fn(f64) -> f64| {
        let values = truth.iter().flat_map(|p| [1.0 - fg(*p), fg(*p)]).collect();
        ProbabilityMap::new(h, w, 2, values)
    };
    let calibrated = as_map(&|p| p)?;
    let overconfident = as_map(&|p| if p > 0.5 { 0.98 } else { 0.02 })?;

    for (name, pred) in [("calibrated", calibrated), ("overconfident", overconfident)] {
        let r = calibration_report(0, &[pred], &[labels.clone()], 10)?;
        println!(
            "{name:<13} NLL {:.3}  ECE {:.3}  Brier {:.3} = REL {:.3} - RES {:.3} + UNC {:.3}",
            r.nll, r.ece, r.brier, r.reliability, r.resolution, r.uncertainty
        );
        for row in reliability_diagram(&r.bins).iter().filter(|b| b.count > 0) {
            println!(
                "    bin {:.2}: confidence {:.3} accuracy {:.3} ({} px)",
                row.center,
                row.confidence.unwrap_or(f64::NAN),
                row.accuracy.unwrap_or(f64::NAN),
                row.count
            );
        }
    }
    Ok(())
}
