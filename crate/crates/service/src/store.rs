//! Session snapshots on disk.
//!
//! Every save writes a complete snapshot into a fresh `snap-NNNNNN` directory and
//! then switches the `CURRENT` pointer file with a rename, so a crash leaves either
//! the old or the new snapshot live and never a mix. A snapshot holds `state.json`,
//! one `labels_<id>.png` per image with human labels (255 marks unlabeled pixels)
//! and `model.bin` once a model has been trained for the current step.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use segal::acquisition::{AnnotationState, ImageAnnotation, Region};
use segal::data::{read_mask_png, write_mask_png};
use segal::grid::UNLABELED;
use segal::orchestrator::StepRow;
use segal::segmenter::{load_checkpoint, save_checkpoint, Parameters};
use segal::{Error, Result};

use crate::session::SuggestionBatch;

const POINTER: &str = "CURRENT";
const STATE: &str = "state.json";
const MODEL: &str = "model.bin";

/// Borrowed view of everything a snapshot records.
pub(crate) struct SnapshotRef<'a> {
    pub step: usize,
    pub metrics: &'a [StepRow],
    pub batch: Option<&'a SuggestionBatch>,
    pub annotations: &'a AnnotationState,
    pub model: Option<&'a Parameters>,
}

/// A snapshot read back from disk.
pub(crate) struct Snapshot {
    pub step: usize,
    pub metrics: Vec<StepRow>,
    pub batch: Option<SuggestionBatch>,
    pub annotations: AnnotationState,
    pub model: Option<Parameters>,
}

#[derive(Serialize, Deserialize)]
struct StateFile {
    step: usize,
    height: usize,
    width: usize,
    image_count: usize,
    metrics: Vec<StepRow>,
    batch: Option<SuggestionBatch>,
    labeled: Vec<LabeledImage>,
    has_model: bool,
}

#[derive(Serialize, Deserialize)]
struct LabeledImage {
    image_id: usize,
    labels: String,
    regions: Vec<Region>,
}

pub(crate) struct SessionStore {
    dir: PathBuf,
    next: AtomicU64,
}

impl SessionStore {
    pub fn open(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut last = 0;
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let name = entry.map_err(|e| Error::io(dir, e))?.file_name();
            if let Some(n) = name.to_str().and_then(snapshot_number) {
                last = last.max(n);
            }
        }
        Ok(SessionStore {
            dir: dir.to_path_buf(),
            next: AtomicU64::new(last + 1),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn save(&self, snap: &SnapshotRef) -> Result<()> {
        let seq = self.next.fetch_add(1, Ordering::SeqCst);
        let name = format!("snap-{seq:06}");
        let tmp = self.dir.join(format!(".tmp-{seq:06}"));
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

        let mut labeled = Vec::new();
        for (id, ann) in snap.annotations.images().iter().enumerate() {
            if !ann.human_mask.iter().any(|m| *m) {
                continue;
            }
            let file = format!("labels_{id}.png");
            write_mask_png(&ann.human_labels, &tmp.join(&file))?;
            labeled.push(LabeledImage {
                image_id: id,
                labels: file,
                regions: ann.selected_regions.clone(),
            });
        }
        if let Some(model) = snap.model {
            save_checkpoint(model, &tmp.join(MODEL))?;
        }
        let state = StateFile {
            step: snap.step,
            height: snap.annotations.height(),
            width: snap.annotations.width(),
            image_count: snap.annotations.len(),
            metrics: snap.metrics.to_vec(),
            batch: snap.batch.cloned(),
            labeled,
            has_model: snap.model.is_some(),
        };
        let path = tmp.join(STATE);
        let text = serde_json::to_string_pretty(&state).expect("state serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

        let live = self.dir.join(&name);
        fs::rename(&tmp, &live).map_err(|e| Error::io(&live, e))?;
        let pointer_tmp = self.dir.join(format!("{POINTER}.tmp"));
        fs::write(&pointer_tmp, &name).map_err(|e| Error::io(&pointer_tmp, e))?;
        let pointer = self.dir.join(POINTER);
        fs::rename(&pointer_tmp, &pointer).map_err(|e| Error::io(&pointer, e))?;
        self.prune(&name);
        Ok(())
    }

    /// Removes superseded snapshots; failures only cost disk space.
    fn prune(&self, keep: &str) {
        let Ok(entries) = fs::read_dir(&self.dir) else { return };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let stale = (snapshot_number(name).is_some() && name != keep) || name.starts_with(".tmp-");
            if stale {
                if let Err(e) = fs::remove_dir_all(entry.path()) {
                    log::warn!("could not remove {}: {e}", entry.path().display());
                }
            }
        }
    }

    /// Reads the live snapshot, if any.
    pub fn load(&self) -> Result<Option<Snapshot>> {
        let pointer = self.dir.join(POINTER);
        let name = match fs::read_to_string(&pointer) {
            Ok(n) => n,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&pointer, e)),
        };
        let snap_dir = self.dir.join(name.trim());
        let path = snap_dir.join(STATE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: StateFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            message: e.to_string(),
        })?;

        let (h, w) = (state.height, state.width);
        let mut images: Vec<ImageAnnotation> = (0..state.image_count).map(|_| ImageAnnotation::empty(h, w)).collect();
        for rec in &state.labeled {
            let Some(slot) = images.get_mut(rec.image_id) else {
                return Err(Error::Format {
                    path,
                    message: format!("image id {} out of range", rec.image_id),
                });
            };
            let labels = read_mask_png(&snap_dir.join(&rec.labels))?;
            slot.human_mask = labels.labels().iter().map(|l| *l != UNLABELED).collect();
            slot.human_labels = labels;
            slot.selected_regions = rec.regions.clone();
        }
        let annotations = AnnotationState::from_images(h, w, images)?;
        let model = if state.has_model {
            Some(load_checkpoint(&snap_dir.join(MODEL))?)
        } else {
            None
        };
        Ok(Some(Snapshot {
            step: state.step,
            metrics: state.metrics,
            batch: state.batch,
            annotations,
            model,
        }))
    }
}

fn snapshot_number(name: &str) -> Option<u64> {
    name.strip_prefix("snap-")?.parse().ok()
}
