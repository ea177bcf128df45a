use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use super::oracle::SimulatedOracle;
use super::training::{derive_seed, evaluate, split_validation, train_restart_best, training_sample, Evaluation, RestartLog};
use crate::acquisition::{
    image_utility, merge_pseudo_labels, prepare_pseudo_labels, random_map, select_images, select_regions,
    uncertainty_map, AcquisitionFunction, AnnotationState, Region, UncertaintyMap,
};
use crate::calibration::{reliability_diagram, uncertainty_histogram, DiagramRow};
use crate::data::{Dataset, Record};
use crate::error::{Error, Result};
use crate::grid::{LabelMask, ProbabilityMap};
use crate::segmenter::{mc_predict, Parameters};

// stream tags for derive_seed
const TAG_INITIAL: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_SCORE: u64 = 3;
const TAG_EVAL: u64 = 4;
const TAG_SPLIT: u64 = 5;
const TAG_PSEUDO: u64 = 6;
/// Training-stream step index reserved for the full-data baseline.
const BASELINE_STEP: u64 = u64::MAX;

/// One results.csv row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    pub seed: u64,
    pub labeled_pixels: usize,
    pub f1: f64,
    pub dice_obj: f64,
    pub jaccard: f64,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
    pub rel: f64,
    pub res: f64,
    pub unc: f64,
    pub wallclock_s: f64,
}

/// One acquisition.csv row: a selected window or whole image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionRow {
    pub step: usize,
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    pub seed: u64,
    pub image_id: usize,
    pub top: usize,
    pub left: usize,
    pub k_w: usize,
    pub k_h: usize,
    /// Window score for regions, summed uncertainty for whole images.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub strategy: Strategy,
    pub acq_fn: AcquisitionFunction,
    pub seed: u64,
    pub rows: Vec<StepRow>,
    pub acquisitions: Vec<AcquisitionRow>,
    /// Reliability diagram of the model evaluated at each step.
    pub reliability: Vec<(usize, Vec<DiagramRow>)>,
    /// Normalized-uncertainty histogram of the pixels selected at each step (from 1).
    pub histograms: Vec<(usize, Vec<f64>)>,
    pub restarts: Vec<(usize, Vec<RestartLog>)>,
    pub params: Parameters,
    pub state: AnnotationState,
    /// Set when the loop stopped before `query_steps` because nothing was left to select.
    pub exhausted: bool,
}

/// Test metrics of a model trained on the whole training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub seed: u64,
    pub labeled_pixels: usize,
    pub f1: f64,
    pub dice_obj: f64,
    pub jaccard: f64,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
}

/// Per-seed view of an experiment: the train and test splits plus the seeded
/// training, evaluation and scoring steps shared by both loops and the service.
pub struct LoopContext<'a> {
    cfg: &'a ExperimentConfig,
    seed: u64,
    train: Vec<&'a Record>,
    test: Vec<&'a Record>,
    classes: usize,
    height: usize,
    width: usize,
}

impl<'a> LoopContext<'a> {
    pub fn new(cfg: &'a ExperimentConfig, dataset: &'a Dataset, seed: u64) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_for(dataset)?;
        let train = dataset.train();
        let (height, width) = (train[0].image.height(), train[0].image.width());
        Ok(LoopContext {
            cfg,
            seed,
            test: dataset.test(),
            train,
            classes: dataset.classes,
            height,
            width,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Training records, indexed by the image ids used in [`AnnotationState`].
    pub fn train(&self) -> &[&'a Record] {
        &self.train
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Ids fully labeled before the first query, and the remaining pool, both sorted.
    pub fn initial_split(&self) -> (Vec<usize>, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[TAG_INITIAL])));
        let mut initial = order[..self.cfg.initial_labeled].to_vec();
        let mut pool = order[self.cfg.initial_labeled..].to_vec();
        initial.sort_unstable();
        pool.sort_unstable();
        (initial, pool)
    }

    /// Trains `restarts` fresh models on the labeled images and keeps the best.
    pub fn retrain(&self, state: &AnnotationState, step: u64) -> Result<(Parameters, Vec<RestartLog>)> {
        let labeled = state.labeled_images();
        let (tr, val) = split_validation(
            &labeled,
            derive_seed(self.seed, &[TAG_SPLIT]),
            self.cfg.validation_fraction,
            self.cfg.min_validation,
        );
        let samples = |ids: &[usize]| -> Result<Vec<_>> {
            ids.iter()
                .map(|&id| training_sample(state, id, &self.train[id].image))
                .collect()
        };
        let model = train_restart_best(
            &samples(&tr)?,
            &samples(&val)?,
            &self.cfg.network,
            &self.cfg.training,
            self.cfg.restarts,
            derive_seed(self.seed, &[TAG_TRAIN, step]),
        )?;
        Ok((model.params, model.restarts))
    }

    pub fn evaluate(&self, params: &Parameters, step: usize) -> Result<Evaluation> {
        evaluate(
            params,
            &self.test,
            self.cfg.mc_passes,
            derive_seed(self.seed, &[TAG_EVAL]),
            self.cfg.calibration_bins,
            step,
        )
    }

    /// Uncertainty map (and MC mean when a prediction was needed) for each pool image.
    pub fn score_pool(
        &self,
        params: &Parameters,
        pool: &[usize],
        step: u64,
    ) -> Result<Vec<(usize, UncertaintyMap, Option<ProbabilityMap>)>> {
        let acq = self.cfg.acq_fn;
        pool.iter()
            .map(|&id| {
                let s = derive_seed(self.seed, &[TAG_SCORE, step, id as u64]);
                if !acq.needs_prediction() {
                    let mut rng = ChaCha8Rng::seed_from_u64(s);
                    return Ok((id, random_map(self.height, self.width, &mut rng), None));
                }
                let (mean, stack) = mc_predict(params, &self.train[id].image, self.cfg.mc_passes, s)?;
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let map = uncertainty_map(acq, Some(&stack), self.height, self.width, &mut rng)?;
                Ok((id, map, Some(mean)))
            })
            .collect()
    }

    /// Pseudo-labels for image `id` from its own seeded MC prediction.
    pub fn pseudo_labels(&self, params: &Parameters, state: &AnnotationState, id: usize, step: u64) -> Result<LabelMask> {
        let ann = state
            .image(id)
            .ok_or_else(|| Error::invalid(format!("no annotation record for image {id}")))?;
        prepare_pseudo_labels(
            params,
            &self.train[id].image,
            &ann.human_mask,
            &ann.human_labels,
            self.cfg.mc_passes,
            derive_seed(self.seed, &[TAG_PSEUDO, step, id as u64]),
        )
    }

    /// A results row; `wallclock_s` is zeroed unless the config records it.
    pub fn row(&self, step: usize, labeled_pixels: usize, eval: &Evaluation, elapsed_s: f64) -> StepRow {
        let c = &eval.calibration;
        StepRow {
            step,
            strategy: self.cfg.strategy,
            acq_fn: self.cfg.acq_fn,
            seed: self.seed,
            labeled_pixels,
            f1: eval.segmentation.f1,
            dice_obj: eval.segmentation.dice_obj,
            jaccard: eval.segmentation.jaccard,
            nll: c.nll,
            ece: c.ece,
            brier: c.brier,
            rel: c.reliability,
            res: c.resolution,
            unc: c.uncertainty,
            wallclock_s: if self.cfg.record_wallclock { elapsed_s } else { 0.0 },
        }
    }
}

/// Runs the configured strategy for one seed.
pub fn run_seed(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunResult> {
    match cfg.strategy {
        Strategy::FullImage => run_full_image_loop(cfg, dataset, seed),
        Strategy::Region => run_region_loop(cfg, dataset, seed),
    }
}

pub fn run_full_image_loop(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunResult> {
    if cfg.strategy != Strategy::FullImage {
        return Err(Error::Config("run_full_image_loop needs strategy FULL_IMAGE".into()));
    }
    run_loop(cfg, dataset, seed)
}

pub fn run_region_loop(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunResult> {
    if cfg.strategy != Strategy::Region {
        return Err(Error::Config("run_region_loop needs strategy REGION".into()));
    }
    run_loop(cfg, dataset, seed)
}

fn run_loop(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<RunResult> {
    let started = Instant::now();
    let ctx = LoopContext::new(cfg, dataset, seed)?;
    let (h, w) = (ctx.height, ctx.width);
    let oracle = SimulatedOracle::new(ctx.train.iter().map(|r| r.mask.clone()).collect());
    let mut state = AnnotationState::new(ctx.train.len(), h, w);

    let (initial, rest) = ctx.initial_split();
    for &id in &initial {
        state.annotate_full(id, &oracle.label_image(id)?)?;
    }
    // images that can still be queried; in the region loop they stay until fully covered
    let mut pool: BTreeSet<usize> = rest.into_iter().collect();

    let mut result = RunResult {
        strategy: cfg.strategy,
        acq_fn: cfg.acq_fn,
        seed,
        rows: Vec::new(),
        acquisitions: Vec::new(),
        reliability: Vec::new(),
        histograms: Vec::new(),
        restarts: Vec::new(),
        params: Parameters::zeros(&cfg.network)?,
        state: state.clone(),
        exhausted: false,
    };

    let (mut params, logs) = ctx.retrain(&state, 0)?;
    record_step(&ctx, &mut result, 0, &state, &params, logs, started)?;

    for step in 1..=cfg.query_steps {
        if pool.is_empty() {
            log::warn!("pool exhausted before step {step}");
            result.exhausted = true;
            break;
        }
        let ids: Vec<usize> = pool.iter().copied().collect();
        let scored = ctx.score_pool(&params, &ids, step as u64)?;
        let hist = match cfg.strategy {
            Strategy::FullImage => {
                let utilities: Vec<(usize, f64)> = scored.iter().map(|(id, m, _)| (*id, image_utility(m))).collect();
                let chosen = select_images(&utilities, cfg.images_per_step).items;
                let mut sel = Vec::new();
                for &id in &chosen {
                    state.annotate_full(id, &oracle.label_image(id)?)?;
                    pool.remove(&id);
                    let utility = utilities.iter().find(|u| u.0 == id).map(|u| u.1).unwrap_or(0.0);
                    result.acquisitions.push(acq_row(&ctx, step, Region::new(id, 0, 0, h, w), utility));
                    let map = &scored.iter().find(|s| s.0 == id).expect("scored").1;
                    sel.push((map, vec![true; h * w]));
                }
                histogram(&ctx, &sel)?
            }
            Strategy::Region => {
                let pool_maps: Vec<(usize, &UncertaintyMap)> = scored.iter().map(|(id, m, _)| (*id, m)).collect();
                let selection = select_regions(&pool_maps, &cfg.region, &state.selected_regions())?;
                if selection.items.is_empty() {
                    log::warn!("no pool pixel left with positive uncertainty at step {step}");
                    result.exhausted = true;
                    break;
                }
                let mut touched: BTreeSet<usize> = BTreeSet::new();
                let mut sel: Vec<(&UncertaintyMap, Vec<bool>)> = Vec::new();
                for sr in &selection.items {
                    let r = sr.region;
                    state.annotate_region(r, &oracle.label_region(&r)?)?;
                    touched.insert(r.image_id);
                    result.acquisitions.push(acq_row(&ctx, step, r, sr.score));
                    let map = &scored.iter().find(|s| s.0 == r.image_id).expect("scored").1;
                    let mut mask = vec![false; h * w];
                    r.pixels(w).for_each(|i| mask[i] = true);
                    sel.push((map, mask));
                }
                for &id in &touched {
                    // reuse the scoring prediction when there is one
                    let pseudo = match &scored.iter().find(|s| s.0 == id).expect("scored").2 {
                        Some(mean) => {
                            let ann = state.image(id).expect("annotated");
                            merge_pseudo_labels(&mean.argmax(), &ann.human_mask, &ann.human_labels)?
                        }
                        None => ctx.pseudo_labels(&params, &state, id, step as u64)?,
                    };
                    state.set_pseudo_labels(id, pseudo)?;
                    if state.image(id).expect("annotated").is_fully_labeled() {
                        pool.remove(&id);
                    }
                }
                histogram(&ctx, &sel)?
            }
        };
        result.histograms.push((step, hist));
        let (p, logs) = ctx.retrain(&state, step as u64)?;
        params = p;
        record_step(&ctx, &mut result, step, &state, &params, logs, started)?;
    }
    result.params = params;
    result.state = state;
    Ok(result)
}

fn acq_row(ctx: &LoopContext, step: usize, r: Region, score: f64) -> AcquisitionRow {
    AcquisitionRow {
        step,
        strategy: ctx.cfg.strategy,
        acq_fn: ctx.cfg.acq_fn,
        seed: ctx.seed,
        image_id: r.image_id,
        top: r.top,
        left: r.left,
        k_w: r.width,
        k_h: r.height,
        score,
    }
}

fn histogram(ctx: &LoopContext, sel: &[(&UncertaintyMap, Vec<bool>)]) -> Result<Vec<f64>> {
    let maps: Vec<(&UncertaintyMap, &[bool])> = sel.iter().map(|(m, s)| (*m, s.as_slice())).collect();
    uncertainty_histogram(&maps, ctx.classes, ctx.cfg.histogram_bins)
}

fn record_step(
    ctx: &LoopContext,
    result: &mut RunResult,
    step: usize,
    state: &AnnotationState,
    params: &Parameters,
    logs: Vec<RestartLog>,
    started: Instant,
) -> Result<()> {
    let eval = ctx.evaluate(params, step)?;
    let row = ctx.row(step, state.labeled_pixels(), &eval, started.elapsed().as_secs_f64());
    log::info!(
        "{} {} seed {} step {step}: {} px, dice {:.4}, f1 {:.4}, nll {:.4}",
        row.strategy,
        row.acq_fn,
        row.seed,
        row.labeled_pixels,
        row.dice_obj,
        row.f1,
        row.nll
    );
    result.rows.push(row);
    result.reliability.push((step, reliability_diagram(&eval.calibration.bins)));
    result.restarts.push((step, logs));
    Ok(())
}

/// Trains on every training image and evaluates, giving the reference level for
/// the pixels-to-target summary.
pub fn full_data_baseline(cfg: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<(BaselineRow, Parameters)> {
    let ctx = LoopContext::new(cfg, dataset, seed)?;
    let mut state = AnnotationState::new(ctx.train.len(), ctx.height, ctx.width);
    for (id, rec) in ctx.train.iter().enumerate() {
        state.annotate_full(id, &rec.mask)?;
    }
    let (params, _) = ctx.retrain(&state, BASELINE_STEP)?;
    let eval = ctx.evaluate(&params, 0)?;
    let c = &eval.calibration;
    Ok((
        BaselineRow {
            seed,
            labeled_pixels: state.labeled_pixels(),
            f1: eval.segmentation.f1,
            dice_obj: eval.segmentation.dice_obj,
            jaccard: eval.segmentation.jaccard,
            nll: c.nll,
            ece: c.ece,
            brier: c.brier,
        },
        params,
    ))
}
