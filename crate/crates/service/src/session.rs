use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use segal::acquisition::{image_utility, select_images, select_regions, AnnotationState, Region};
use segal::data::{encode_image_png, encode_mask_png, Dataset};
use segal::grid::LabelMask;
use segal::orchestrator::{write_results_csv, ExperimentConfig, LoopContext, StepRow, Strategy};
use segal::segmenter::Parameters;
use segal::Error;

use crate::error::{ApiError, PixelProblem, MAX_PROBLEMS};
use crate::store::{SessionStore, Snapshot, SnapshotRef};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    /// A model snapshot is ready and no batch is outstanding.
    Idle,
    /// A suggestion batch is waiting for annotations.
    Suggesting,
    /// A retrain is running; suggestions and overlays are unavailable.
    Training,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestedRegion {
    #[serde(flatten)]
    pub region: Region,
    pub score: f64,
}

/// Where to fetch guidance labels for one image of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRef {
    pub image_id: usize,
    pub overlay: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionBatch {
    pub batch_id: String,
    /// Acquisition step this batch belongs to.
    pub step: usize,
    pub snapshot_id: String,
    /// Sorted by non-increasing score.
    pub regions: Vec<SuggestedRegion>,
    pub pseudo_labels: Vec<PseudoLabelRef>,
}

/// Labels for one suggested window, `k_h` rows of `k_w` class ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLabels {
    #[serde(flatten)]
    pub region: Region,
    pub labels: Vec<Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSubmission {
    pub batch_id: String,
    pub regions: Vec<RegionLabels>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acknowledgment {
    pub batch_id: String,
    pub accepted_regions: usize,
    pub labeled_pixels: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusDocument {
    pub phase: Phase,
    /// Number of accepted batches; the current model was trained after the last one.
    pub step: usize,
    pub labeled_pixels: usize,
    pub snapshot_id: Option<String>,
    pub batch_id: Option<String>,
    /// Latest results row, identical to the last line of results.csv.
    pub metrics: Option<StepRow>,
    pub pool_images: usize,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub image_id: usize,
    pub height: usize,
    pub width: usize,
    pub snapshot_id: String,
    /// Base64 PNG of the image.
    pub image_png: String,
    /// Base64 single-channel PNG of class ids: human labels where present,
    /// MC-averaged predictions elsewhere.
    pub pseudo_labels_png: String,
    /// Windows of the outstanding batch inside this image.
    pub regions: Vec<SuggestedRegion>,
}

struct Session {
    phase: Phase,
    step: usize,
    annotations: AnnotationState,
    model: Option<Arc<Parameters>>,
    batch: Option<SuggestionBatch>,
    metrics: Vec<StepRow>,
    /// Bumped whenever a retrain is scheduled so late results of older jobs are dropped.
    generation: u64,
    last_error: Option<String>,
}

impl Session {
    fn snapshot_ref(&self) -> SnapshotRef<'_> {
        SnapshotRef {
            step: self.step,
            metrics: &self.metrics,
            batch: self.batch.as_ref(),
            annotations: &self.annotations,
            model: self.model.as_deref(),
        }
    }

    fn snapshot_id(&self) -> Option<String> {
        self.model.as_ref().map(|_| snapshot_id(self.step))
    }
}

struct Shared {
    cfg: ExperimentConfig,
    dataset: Dataset,
    seed: u64,
    store: SessionStore,
    session: RwLock<Session>,
    /// Serializes batch computation so concurrent requests share one result.
    suggesting: Mutex<()>,
    overlays: Mutex<HashMap<(String, usize), Arc<LabelMask>>>,
}

/// Region-loop state with a human oracle, safe to share across request handlers.
///
/// Reads take a shared lock and never wait on each other. Submissions, retrains
/// and batch creation take the write lock briefly; model training itself runs on
/// a background thread with no lock held.
#[derive(Clone)]
pub struct AnnotationService {
    shared: Arc<Shared>,
}

fn snapshot_id(step: usize) -> String {
    format!("model-{step}")
}

fn batch_id(step: usize) -> String {
    format!("batch-{step}")
}

impl AnnotationService {
    /// Opens the session stored under `<output_dir>/session`, or starts a new one
    /// with the initial images labeled from ground truth. Relative manifest paths
    /// resolve against `base`. Training starts in the background when the session
    /// has no model for its current step.
    pub fn open(cfg: ExperimentConfig, base: &Path) -> segal::Result<Self> {
        cfg.validate()?;
        let dataset = cfg.dataset.load(base)?;
        let seed = cfg.seeds[0];
        let store = SessionStore::open(&cfg.output_dir.join("session"))?;
        let ctx = LoopContext::new(&cfg, &dataset, seed)?;
        let (h, w) = ctx.shape();
        let n = ctx.train().len();

        let session = match store.load()? {
            Some(snap) => {
                let a = &snap.annotations;
                if (a.len(), a.height(), a.width()) != (n, h, w) {
                    return Err(Error::Config(format!(
                        "session in {} was recorded for a different dataset",
                        store.dir().display()
                    )));
                }
                log::info!("resuming session at step {} from {}", snap.step, store.dir().display());
                restore(snap)
            }
            None => {
                let mut annotations = AnnotationState::new(n, h, w);
                for id in ctx.initial_split().0 {
                    annotations.annotate_full(id, &ctx.train()[id].mask)?;
                }
                let s = Session {
                    phase: Phase::Training,
                    step: 0,
                    annotations,
                    model: None,
                    batch: None,
                    metrics: Vec::new(),
                    generation: 0,
                    last_error: None,
                };
                store.save(&s.snapshot_ref())?;
                s
            }
        };
        drop(ctx);
        let needs_training = session.phase == Phase::Training;
        let generation = session.generation;
        let svc = AnnotationService {
            shared: Arc::new(Shared {
                cfg,
                dataset,
                seed,
                store,
                session: RwLock::new(session),
                suggesting: Mutex::new(()),
                overlays: Mutex::new(HashMap::new()),
            }),
        };
        if needs_training {
            svc.spawn_training(generation);
        }
        Ok(svc)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.shared.cfg
    }

    pub fn dataset(&self) -> &Dataset {
        &self.shared.dataset
    }

    /// Copy of the current annotation state.
    pub fn annotations(&self) -> AnnotationState {
        self.read().annotations.clone()
    }

    /// Current model snapshot, if one is ready.
    pub fn model(&self) -> Option<Arc<Parameters>> {
        self.read().model.clone()
    }

    fn ctx(&self) -> segal::Result<LoopContext<'_>> {
        LoopContext::new(&self.shared.cfg, &self.shared.dataset, self.shared.seed)
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Session> {
        self.shared.session.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, Session> {
        self.shared.session.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn state(&self) -> StatusDocument {
        let s = self.read();
        StatusDocument {
            phase: s.phase,
            step: s.step,
            labeled_pixels: s.annotations.labeled_pixels(),
            snapshot_id: s.snapshot_id(),
            batch_id: s.batch.as_ref().map(|b| b.batch_id.clone()),
            metrics: s.metrics.last().cloned(),
            pool_images: s.annotations.images().iter().filter(|a| !a.is_fully_labeled()).count(),
            last_error: s.last_error.clone(),
        }
    }

    /// Blocks until no retrain is running, or the timeout passes. Returns the final phase.
    pub fn wait_until_trained(&self, timeout: Duration) -> Phase {
        let deadline = Instant::now() + timeout;
        loop {
            let phase = self.read().phase;
            if phase != Phase::Training || Instant::now() >= deadline {
                return phase;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
    }

    /// The outstanding batch, computing it from the current snapshot if needed.
    pub fn suggestions(&self) -> Result<SuggestionBatch, ApiError> {
        let _guard = self.shared.suggesting.lock().unwrap_or_else(|p| p.into_inner());
        let (model, annotations, step, generation) = {
            let s = self.read();
            if s.phase == Phase::Training {
                return Err(ApiError::Busy("retraining in progress".into()));
            }
            if let Some(b) = &s.batch {
                return Ok(b.clone());
            }
            let Some(model) = s.model.clone() else {
                return Err(ApiError::Busy("no model snapshot; POST /api/retrain".into()));
            };
            (model, s.annotations.clone(), s.step, s.generation)
        };

        let cfg = &self.shared.cfg;
        let ctx = self.ctx()?;
        let (h, w) = ctx.shape();
        let acq_step = step + 1;
        let pool: Vec<usize> = (0..annotations.len())
            .filter(|&id| !annotations.images()[id].is_fully_labeled())
            .collect();
        let scored = ctx.score_pool(&model, &pool, acq_step as u64)?;
        let regions: Vec<SuggestedRegion> = match cfg.strategy {
            Strategy::Region => {
                let maps: Vec<_> = scored.iter().map(|(id, m, _)| (*id, m)).collect();
                select_regions(&maps, &cfg.region, &annotations.selected_regions())?
                    .items
                    .into_iter()
                    .map(|sr| SuggestedRegion {
                        region: sr.region,
                        score: sr.score,
                    })
                    .collect()
            }
            Strategy::FullImage => {
                let utilities: Vec<(usize, f64)> = scored.iter().map(|(id, m, _)| (*id, image_utility(m))).collect();
                select_images(&utilities, cfg.images_per_step)
                    .items
                    .into_iter()
                    .map(|id| SuggestedRegion {
                        region: Region::new(id, 0, 0, h, w),
                        score: utilities.iter().find(|u| u.0 == id).map_or(0.0, |u| u.1),
                    })
                    .collect()
            }
        };
        let images: BTreeSet<usize> = regions.iter().map(|r| r.region.image_id).collect();
        let batch = SuggestionBatch {
            batch_id: batch_id(acq_step),
            step: acq_step,
            snapshot_id: snapshot_id(step),
            regions,
            pseudo_labels: images
                .into_iter()
                .map(|image_id| PseudoLabelRef {
                    image_id,
                    overlay: format!("/api/overlay/{image_id}"),
                })
                .collect(),
        };

        let mut s = self.write();
        if s.generation != generation || s.phase == Phase::Training {
            return Err(ApiError::Busy("retraining in progress".into()));
        }
        if batch.regions.is_empty() {
            // nothing left to annotate; there is no batch to submit against
            return Ok(batch);
        }
        s.batch = Some(batch.clone());
        s.phase = Phase::Suggesting;
        if let Err(e) = self.shared.store.save(&s.snapshot_ref()) {
            s.batch = None;
            s.phase = Phase::Idle;
            return Err(e.into());
        }
        Ok(batch)
    }

    /// Applies a complete submission for the outstanding batch and schedules a retrain.
    pub fn submit(&self, sub: &AnnotationSubmission) -> Result<Acknowledgment, ApiError> {
        let classes = self.shared.dataset.classes;
        let mut s = self.write();
        let batch = match &s.batch {
            Some(b) if b.batch_id == sub.batch_id => b.clone(),
            Some(b) => {
                return Err(ApiError::Conflict(format!(
                    "batch `{}` is not outstanding (current: `{}`)",
                    sub.batch_id, b.batch_id
                )))
            }
            None => return Err(ApiError::Conflict(format!("batch `{}` is not outstanding", sub.batch_id))),
        };
        let grids = validate_submission(&batch, sub, classes)?;

        let mut annotations = s.annotations.clone();
        for (region, labels) in &grids {
            annotations.annotate_region(*region, labels)?;
        }
        let next = Session {
            phase: Phase::Training,
            step: s.step + 1,
            annotations,
            model: None,
            batch: None,
            metrics: s.metrics.clone(),
            generation: s.generation + 1,
            last_error: None,
        };
        // persist before the new state becomes visible
        self.shared.store.save(&next.snapshot_ref())?;
        *s = next;
        let ack = Acknowledgment {
            batch_id: batch.batch_id,
            accepted_regions: grids.len(),
            labeled_pixels: s.annotations.labeled_pixels(),
            phase: s.phase,
        };
        let generation = s.generation;
        drop(s);
        self.spawn_training(generation);
        Ok(ack)
    }

    /// Retrains on the current annotations, dropping any outstanding batch.
    pub fn retrain(&self) -> Result<StatusDocument, ApiError> {
        {
            let mut s = self.write();
            if s.phase == Phase::Training {
                return Err(ApiError::Busy("retraining already in progress".into()));
            }
            let next = Session {
                phase: Phase::Training,
                step: s.step,
                annotations: s.annotations.clone(),
                model: None,
                batch: None,
                metrics: s.metrics.clone(),
                generation: s.generation + 1,
                last_error: None,
            };
            self.shared.store.save(&next.snapshot_ref())?;
            *s = next;
            let generation = s.generation;
            drop(s);
            self.spawn_training(generation);
        }
        Ok(self.state())
    }

    /// Image, guidance labels and batch windows for one training image.
    pub fn overlay(&self, image_id: usize) -> Result<Overlay, ApiError> {
        let n = self.shared.dataset.train().len();
        if image_id >= n {
            return Err(ApiError::NotFound(format!("image {image_id} (training split has {n} images)")));
        }
        let (model, annotations, step, regions) = {
            let s = self.read();
            if s.phase == Phase::Training {
                return Err(ApiError::Busy("retraining in progress".into()));
            }
            let Some(model) = s.model.clone() else {
                return Err(ApiError::Busy("no model snapshot".into()));
            };
            let regions: Vec<SuggestedRegion> = s
                .batch
                .iter()
                .flat_map(|b| b.regions.iter())
                .filter(|r| r.region.image_id == image_id)
                .cloned()
                .collect();
            (model, s.annotations.clone(), s.step, regions)
        };
        let sid = snapshot_id(step);
        let pseudo = self.pseudo_labels(&sid, &model, &annotations, image_id, step)?;
        let image = &self.shared.dataset.train()[image_id].image;
        Ok(Overlay {
            image_id,
            height: image.height(),
            width: image.width(),
            snapshot_id: sid,
            image_png: BASE64.encode(encode_image_png(image)?),
            pseudo_labels_png: BASE64.encode(encode_mask_png(&pseudo)?),
            regions,
        })
    }

    fn pseudo_labels(
        &self,
        sid: &str,
        model: &Parameters,
        annotations: &AnnotationState,
        image_id: usize,
        step: usize,
    ) -> segal::Result<Arc<LabelMask>> {
        let key = (sid.to_string(), image_id);
        if let Some(hit) = self.shared.overlays.lock().unwrap_or_else(|p| p.into_inner()).get(&key) {
            return Ok(hit.clone());
        }
        let labels = Arc::new(self.ctx()?.pseudo_labels(model, annotations, image_id, step as u64)?);
        let mut cache = self.shared.overlays.lock().unwrap_or_else(|p| p.into_inner());
        cache.retain(|k, _| k.0 == sid);
        cache.insert(key, labels.clone());
        Ok(labels)
    }

    fn spawn_training(&self, generation: u64) {
        let svc = self.clone();
        std::thread::spawn(move || {
            if let Err(e) = svc.train(generation) {
                log::error!("retrain failed: {e}");
                let mut s = svc.write();
                if s.generation == generation {
                    s.phase = Phase::Idle;
                    s.last_error = Some(e.to_string());
                }
            }
        });
    }

    fn train(&self, generation: u64) -> segal::Result<()> {
        let started = Instant::now();
        let (annotations, step) = {
            let s = self.read();
            (s.annotations.clone(), s.step)
        };
        let ctx = self.ctx()?;
        let (params, _) = ctx.retrain(&annotations, step as u64)?;
        let eval = ctx.evaluate(&params, step)?;
        let row = ctx.row(step, annotations.labeled_pixels(), &eval, started.elapsed().as_secs_f64());

        let mut s = self.write();
        if s.generation != generation {
            log::info!("discarding superseded retrain for step {step}");
            return Ok(());
        }
        let mut metrics = s.metrics.clone();
        metrics.retain(|r| r.step != step);
        metrics.push(row);
        write_results_csv(&self.shared.cfg.output_dir.join("results.csv"), &metrics)?;
        let next = Session {
            phase: Phase::Idle,
            step,
            annotations,
            model: Some(Arc::new(params)),
            batch: None,
            metrics,
            generation,
            last_error: None,
        };
        self.shared.store.save(&next.snapshot_ref())?;
        *s = next;
        log::info!("model for step {step} ready");
        Ok(())
    }
}

fn restore(snap: Snapshot) -> Session {
    let phase = match (&snap.model, &snap.batch) {
        (None, _) => Phase::Training,
        (Some(_), Some(_)) => Phase::Suggesting,
        (Some(_), None) => Phase::Idle,
    };
    Session {
        phase,
        step: snap.step,
        annotations: snap.annotations,
        model: snap.model.map(Arc::new),
        batch: snap.batch,
        metrics: snap.metrics,
        generation: 0,
        last_error: None,
    }
}

/// Checks that `sub` labels exactly the windows of `batch` with valid classes and
/// returns the row-major grids in batch order.
fn validate_submission(
    batch: &SuggestionBatch,
    sub: &AnnotationSubmission,
    classes: usize,
) -> Result<Vec<(Region, Vec<u8>)>, ApiError> {
    let mut problems = Vec::new();
    let mut total = 0usize;
    let mut report = |p: PixelProblem| {
        total += 1;
        if problems.len() < MAX_PROBLEMS {
            problems.push(p);
        }
    };
    let at = |r: &Region, reason: String| PixelProblem {
        image_id: r.image_id,
        row: r.top,
        col: r.left,
        reason,
    };

    let expected: BTreeSet<Region> = batch.regions.iter().map(|r| r.region).collect();
    let mut seen: HashMap<Region, Vec<u8>> = HashMap::new();
    for rl in &sub.regions {
        let r = rl.region;
        if !expected.contains(&r) {
            report(at(&r, "window is not part of the batch".into()));
            continue;
        }
        if seen.contains_key(&r) {
            report(at(&r, "window submitted twice".into()));
            continue;
        }
        if rl.labels.len() != r.height || rl.labels.iter().any(|row| row.len() != r.width) {
            let cols = rl.labels.iter().map(Vec::len).max().unwrap_or(0);
            report(at(
                &r,
                format!("grid is {}x{cols}, expected {}x{}", rl.labels.len(), r.height, r.width),
            ));
            continue;
        }
        for (i, row) in rl.labels.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if usize::from(v) >= classes {
                    report(PixelProblem {
                        image_id: r.image_id,
                        row: r.top + i,
                        col: r.left + j,
                        reason: format!("label {v} is not below the class count {classes}"),
                    });
                }
            }
        }
        seen.insert(r, rl.labels.concat());
    }
    for r in &expected {
        if !seen.contains_key(r) && !sub.regions.iter().any(|rl| rl.region == *r) {
            report(at(r, "window has no labels".into()));
        }
    }
    if total > 0 {
        return Err(ApiError::Validation {
            message: format!("{total} problem(s) in submission for `{}`", batch.batch_id),
            problems,
        });
    }
    Ok(batch
        .regions
        .iter()
        .map(|r| (r.region, seen.remove(&r.region).expect("validated")))
        .collect())
}
