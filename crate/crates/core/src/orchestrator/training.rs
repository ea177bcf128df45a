use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::acquisition::AnnotationState;
use crate::calibration::{calibration_report, CalibrationReport};
use crate::data::{extract_contours, Record};
use crate::error::{Error, Result};
use crate::grid::{Image, UNLABELED};
use crate::metrics::{segmentation_scores, summarize, SegmentationSummary, DEFAULT_IOU_THRESHOLD};
use crate::segmenter::{mc_predict, sample_loss, train, NetworkConfig, Parameters, TrainConfig, TrainingSample};

/// SplitMix64 finalizer, used to derive independent seeds from a base seed and tags.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for the stream identified by `parts` under `seed`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(seed), |acc, p| mix(acc ^ mix(*p)))
}

/// Supervision for one annotated image: human labels with a human-pixel train
/// mask, and contour targets derived from the composite (human plus pseudo) labels.
pub fn training_sample(state: &AnnotationState, id: usize, image: &Image) -> Result<TrainingSample> {
    let ann = state
        .image(id)
        .ok_or_else(|| Error::invalid(format!("no annotation record for image {id}")))?;
    let mut composite = ann.composite_labels();
    composite
        .labels_mut()
        .iter_mut()
        .filter(|l| **l == UNLABELED)
        .for_each(|l| *l = 0);
    let contours = extract_contours(&composite);
    TrainingSample::new(image, ann.human_labels.clone(), contours, ann.human_mask.clone())
}

/// Splits labeled image ids into `(train, validation)`. The validation part has
/// `max(min, round(fraction * n))` images chosen by a seeded hash of the id, and
/// is empty when that would leave nothing to train on.
pub fn split_validation(
    labeled: &[usize],
    seed: u64,
    fraction: f64,
    min: usize,
) -> (Vec<usize>, Vec<usize>) {
    let n = labeled.len();
    let k = min.max((fraction * n as f64).round() as usize);
    if fraction == 0.0 || k >= n {
        return (labeled.to_vec(), Vec::new());
    }
    let mut keyed: Vec<(u64, usize)> = labeled.iter().map(|&id| (derive_seed(seed, &[id as u64]), id)).collect();
    keyed.sort_unstable();
    let mut val: Vec<usize> = keyed[..k].iter().map(|(_, id)| *id).collect();
    let mut tr: Vec<usize> = keyed[k..].iter().map(|(_, id)| *id).collect();
    val.sort_unstable();
    tr.sort_unstable();
    (tr, val)
}

/// One independently initialized training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartPlan {
    pub network: NetworkConfig,
    pub training: TrainConfig,
    /// Seeds both the initial parameters and the SGD stream.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestartLog {
    pub restart: usize,
    pub seed: u64,
    /// Mean objective on the validation images, or the last training-epoch
    /// objective when there is no validation split.
    pub selection_loss: f64,
    pub final_train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub params: Parameters,
    pub best: usize,
    pub restarts: Vec<RestartLog>,
}

pub fn restart_plans(network: &NetworkConfig, training: &TrainConfig, restarts: usize, seed: u64) -> Vec<RestartPlan> {
    (0..restarts)
        .map(|r| {
            let s = derive_seed(seed, &[r as u64]);
            RestartPlan {
                network: NetworkConfig {
                    seed: s,
                    ..network.clone()
                },
                training: *training,
                seed: s,
            }
        })
        .collect()
}

fn validation_loss(params: &Parameters, validation: &[TrainingSample], training: &TrainConfig) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut n = 0;
    for s in validation.iter().filter(|s| s.labeled_pixels() > 0) {
        total += sample_loss(params, s, None, &training.loss)?.total;
        n += 1;
    }
    Ok((n > 0).then(|| total / n as f64))
}

/// Runs every plan from fresh parameters and keeps the model with the lowest
/// selection loss (first plan wins ties; non-finite losses never win).
pub fn train_plans(
    train_set: &[TrainingSample],
    validation: &[TrainingSample],
    plans: &[RestartPlan],
) -> Result<TrainedModel> {
    if plans.is_empty() {
        return Err(Error::invalid("at least one restart is required"));
    }
    let mut best: Option<(usize, Parameters, f64)> = None;
    let mut logs = Vec::with_capacity(plans.len());
    for (r, plan) in plans.iter().enumerate() {
        let init = Parameters::init(&plan.network)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, &[1]));
        let out = train(&init, train_set, &plan.training, &mut rng)?;
        let final_train_loss = out.loss_trace.last().copied().unwrap_or(f64::NAN);
        let selection_loss = validation_loss(&out.params, validation, &plan.training)?.unwrap_or(final_train_loss);
        log::debug!("restart {r}: selection loss {selection_loss:.5}, train loss {final_train_loss:.5}");
        logs.push(RestartLog {
            restart: r,
            seed: plan.seed,
            selection_loss,
            final_train_loss,
        });
        let key = if selection_loss.is_finite() { selection_loss } else { f64::INFINITY };
        if best.as_ref().map_or(true, |(_, _, b)| key < *b) {
            best = Some((r, out.params, key));
        }
    }
    let (best, params, _) = best.expect("at least one plan ran");
    Ok(TrainedModel {
        params,
        best,
        restarts: logs,
    })
}

/// Trains `restarts` models with seeds derived from `seed` and keeps the best on validation.
pub fn train_restart_best(
    train_set: &[TrainingSample],
    validation: &[TrainingSample],
    network: &NetworkConfig,
    training: &TrainConfig,
    restarts: usize,
    seed: u64,
) -> Result<TrainedModel> {
    train_plans(train_set, validation, &restart_plans(network, training, restarts, seed))
}

/// Test-set metrics of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub segmentation: SegmentationSummary,
    pub calibration: CalibrationReport,
}

/// Segments every test image with the MC-averaged prediction and scores it.
/// Each image uses the same dropout masks at every step.
pub fn evaluate(
    params: &Parameters,
    test: &[&Record],
    passes: usize,
    seed: u64,
    bins: usize,
    step: usize,
) -> Result<Evaluation> {
    let mut preds = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    let mut scores = Vec::with_capacity(test.len());
    for (i, rec) in test.iter().enumerate() {
        let (mean, _) = mc_predict(params, &rec.image, passes, derive_seed(seed, &[i as u64]))?;
        scores.push(segmentation_scores(&mean.argmax(), &rec.mask, DEFAULT_IOU_THRESHOLD)?);
        preds.push(mean);
        labels.push(rec.mask.clone());
    }
    Ok(Evaluation {
        segmentation: summarize(&scores),
        calibration: calibration_report(step, &preds, &labels, bins)?,
    })
}
