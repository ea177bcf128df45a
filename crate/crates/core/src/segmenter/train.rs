use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::LossConfig;
use super::layers::Tensor;
use super::network::{self, sample_dropout_mask, TrainingSample};
use super::params::Parameters;
use crate::error::{Error, Result};
use crate::grid::{mc_average, softmax_in_place, Image, ProbabilityMap, ProbabilityStack};

/// SGD settings for one retrain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            learning_rate: 0.05,
            loss: LossConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: Parameters,
    /// Mean objective over the samples of each epoch.
    pub loss_trace: Vec<f64>,
}

/// Plain SGD, one sample per step, visiting samples in a fresh random order each
/// epoch and drawing a fresh dropout mask for every step.
pub fn train<R: Rng + ?Sized>(
    initial: &Parameters,
    samples: &[TrainingSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    cfg.loss.validate()?;
    let active: Vec<&TrainingSample> = samples.iter().filter(|s| s.labeled_pixels() > 0).collect();
    if active.is_empty() {
        return Err(Error::NoLabeledData(
            "training set contains no labeled pixel".into(),
        ));
    }
    for s in &active {
        network::check_sample(initial, s)?;
    }
    let mut params = initial.clone();
    let mut order: Vec<usize> = (0..active.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let config = initial.config().clone();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let sample = active[i];
            let mask = sample_dropout_mask(&config, sample.height(), sample.width(), rng);
            let (value, grad) = network::gradient_unchecked(&params, sample, Some(&mask), &cfg.loss)?;
            epoch_loss += value.total;
            if cfg.learning_rate != 0.0 {
                params.add_scaled(&grad, -cfg.learning_rate);
            }
        }
        trace.push(epoch_loss / active.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    Ok(TrainOutcome {
        params,
        loss_trace: trace,
    })
}

/// Random stream for MC pass `pass`, derived only from `(seed, pass)`.
pub fn pass_rng(seed: u64, pass: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pass);
    rng
}

fn probabilities(logits: &Tensor) -> ProbabilityMap {
    let (c, n) = (logits.c, logits.h * logits.w);
    let mut values = vec![0.0; c * n];
    for p in 0..n {
        let px = &mut values[p * c..(p + 1) * c];
        for (k, v) in px.iter_mut().enumerate() {
            *v = logits.data[k * n + p];
        }
        softmax_in_place(px);
    }
    ProbabilityMap::from_trusted(logits.h, logits.w, c, values)
}

/// Deterministic (dropout-free) class probabilities of the main head.
pub fn predict(params: &Parameters, image: &Image) -> Result<ProbabilityMap> {
    let (main, _) = network::forward(params, image, None)?;
    let (h, w, c) = (main.height(), main.width(), main.classes());
    let mut values = main.values().to_vec();
    values.chunks_exact_mut(c).for_each(softmax_in_place);
    Ok(ProbabilityMap::from_trusted(h, w, c, values))
}

/// `passes` stochastic forward passes, each with its own dropout mask, and
/// their per-pixel average.
pub fn mc_predict(
    params: &Parameters,
    image: &Image,
    passes: usize,
    seed: u64,
) -> Result<(ProbabilityMap, ProbabilityStack)> {
    if passes == 0 {
        return Err(Error::invalid("at least one MC pass is required"));
    }
    network::check_image(params, image)?;
    let input = network::tensor_of(image);
    let config = params.config();
    let maps = (0..passes)
        .map(|t| {
            let logits = if config.dropout_rate == 0.0 {
                network::forward_main(params, &input, None)
            } else {
                let mut rng = pass_rng(seed, t as u64);
                let mask = sample_dropout_mask(config, image.height(), image.width(), &mut rng);
                network::forward_main(params, &input, Some(&mask))
            };
            probabilities(&logits)
        })
        .collect();
    let stack = ProbabilityStack::new(maps)?;
    Ok((mc_average(&stack), stack))
}
