use std::path::Path;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde_json::{json, Value};
use tower::ServiceExt;

use segal::acquisition::RegionScoringConfig;
use segal::data::{decode_mask_png, SyntheticConfig};
use segal::orchestrator::{read_csv, DatasetSource, ExperimentConfig, LoopContext, StepRow, Strategy};
use segal::segmenter::{NetworkConfig, TrainConfig};
use segal_service::{router, AnnotationService, Phase, StatusDocument, SuggestionBatch};

const WAIT: Duration = Duration::from_secs(120);

fn config(out: &Path, strategy: Strategy) -> ExperimentConfig {
    ExperimentConfig {
        strategy,
        initial_labeled: 4,
        images_per_step: 2,
        region: RegionScoringConfig {
            k_w: 8,
            k_h: 8,
            k_s: 4,
            k_v: 1.0,
            m: 3,
        },
        mc_passes: 3,
        restarts: 2,
        seeds: vec![7],
        dataset: DatasetSource::Synthetic(SyntheticConfig {
            train_images: 12,
            test_images: 3,
            height: 32,
            width: 32,
            objects: (1, 2),
            axis: (4.0, 7.0),
            seed: 5,
            ..SyntheticConfig::default()
        }),
        output_dir: out.to_path_buf(),
        network: NetworkConfig {
            encoder_blocks: 2,
            base_width: 3,
            ..NetworkConfig::default()
        },
        training: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn open(cfg: &ExperimentConfig) -> (AnnotationService, Router) {
    let svc = AnnotationService::open(cfg.clone(), Path::new(".")).unwrap();
    assert_eq!(svc.wait_until_trained(WAIT), Phase::Idle);
    let app = router(svc.clone());
    (svc, app)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

/// A submission that labels every window of `batch` with ground truth.
fn truthful(svc: &AnnotationService, batch: &SuggestionBatch) -> Value {
    let train = svc.dataset().train();
    let regions: Vec<Value> = batch
        .regions
        .iter()
        .map(|s| {
            let r = s.region;
            let mask = &train[r.image_id].mask;
            let grid: Vec<Vec<u8>> = (0..r.height)
                .map(|i| (0..r.width).map(|j| mask.get(r.top + i, r.left + j)).collect())
                .collect();
            json!({"image_id": r.image_id, "top": r.top, "left": r.left, "k_h": r.height, "k_w": r.width, "labels": grid})
        })
        .collect();
    json!({"batch_id": batch.batch_id, "regions": regions})
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn region_session_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), Strategy::Region);
    let (svc, app) = open(&cfg);

    let (status, body) = call(&app, "GET", "/api/state", None).await;
    assert_eq!(status, StatusCode::OK);
    let state: StatusDocument = serde_json::from_value(body).unwrap();
    assert_eq!((state.phase, state.step), (Phase::Idle, 0));
    assert_eq!(state.labeled_pixels, 4 * 32 * 32);
    let csv: Vec<StepRow> = read_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(state.metrics.as_ref(), csv.last());

    let (status, body) = call(&app, "GET", "/api/suggestions", None).await;
    assert_eq!(status, StatusCode::OK);
    let batch: SuggestionBatch = serde_json::from_value(body).unwrap();
    assert_eq!(batch.regions.len(), 3);
    assert!(batch.regions.windows(2).all(|w| w[0].score >= w[1].score));
    for (i, a) in batch.regions.iter().enumerate() {
        assert!(batch.regions[i + 1..].iter().all(|b| !a.region.overlaps(&b.region)));
    }
    let (_, again) = call(&app, "GET", "/api/suggestions", None).await;
    assert_eq!(again["batch_id"], json!(batch.batch_id));
    assert_eq!(svc.state().phase, Phase::Suggesting);

    // overlay pseudo-labels match an in-process call on the same snapshot
    let id = batch.regions[0].region.image_id;
    let (status, overlay) = call(&app, "GET", &format!("/api/overlay/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    let pseudo = decode_mask_png(&BASE64.decode(overlay["pseudo_labels_png"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!((pseudo.height(), pseudo.width()), (32, 32));
    let model = svc.model().unwrap();
    let ctx = LoopContext::new(&cfg, svc.dataset(), 7).unwrap();
    assert_eq!(pseudo, ctx.pseudo_labels(&model, &svc.annotations(), id, 0).unwrap());
    assert!(!overlay["regions"].as_array().unwrap().is_empty());

    let (status, _) = call(&app, "GET", "/api/overlay/999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    // a class id outside the label set is rejected with its pixel
    let mut bad = truthful(&svc, &batch);
    bad["regions"][0]["labels"][1][2] = json!(9);
    let (status, err) = call(&app, "POST", "/api/annotations", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let r = batch.regions[0].region;
    assert_eq!(err["problems"][0]["row"], json!(r.top + 1));
    assert_eq!(err["problems"][0]["col"], json!(r.left + 2));
    assert_eq!(svc.state().labeled_pixels, 4 * 1024);

    let (status, ack) = call(&app, "POST", "/api/annotations", Some(truthful(&svc, &batch))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ack["labeled_pixels"], json!(4 * 1024 + 3 * 64));
    assert_eq!(ack["phase"], json!("TRAINING"));

    let (status, err) = call(&app, "POST", "/api/annotations", Some(truthful(&svc, &batch))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(err["error"], json!("conflict"));
    if svc.state().phase == Phase::Training {
        let (status, _) = call(&app, "GET", "/api/suggestions", None).await;
        assert_eq!(status, StatusCode::CONFLICT);
    }

    assert_eq!(svc.wait_until_trained(WAIT), Phase::Idle);
    let state = svc.state();
    assert_eq!(state.step, 1);
    let csv: Vec<StepRow> = read_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.len(), 2);
    assert_eq!(state.metrics.as_ref(), csv.last());
    assert_eq!(state.metrics.unwrap().labeled_pixels, 4 * 1024 + 3 * 64);

    // the accepted windows are human labels now and are never suggested again
    let (_, next) = call(&app, "GET", "/api/suggestions", None).await;
    let next: SuggestionBatch = serde_json::from_value(next).unwrap();
    assert_eq!(next.batch_id, "batch-2");
    for s in &next.regions {
        assert!(batch.regions.iter().all(|b| !b.region.overlaps(&s.region)));
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn retrain_endpoint_is_exclusive() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, app) = open(&config(dir.path(), Strategy::Region));
    let before = svc.state().metrics;
    let (status, body) = call(&app, "POST", "/api/retrain", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["phase"], json!("TRAINING"));
    if svc.state().phase == Phase::Training {
        let (status, _) = call(&app, "POST", "/api/retrain", None).await;
        assert_eq!(status, StatusCode::CONFLICT);
    }
    assert_eq!(svc.wait_until_trained(WAIT), Phase::Idle);
    // same annotations and seed give the same model and metrics
    assert_eq!(svc.state().metrics, before);
}

#[test]
fn restart_reproduces_state() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), Strategy::Region);
    let (svc, _) = open(&cfg);
    let batch = svc.suggestions().unwrap();
    let before = svc.state();
    let annotations = svc.annotations();
    drop(svc);

    let reopened = AnnotationService::open(cfg.clone(), Path::new(".")).unwrap();
    assert_eq!(reopened.state(), before);
    assert_eq!(reopened.annotations(), annotations);
    assert_eq!(reopened.suggestions().unwrap(), batch);

    // a crash right after a submission leaves a session that trains on reopen
    let sub = serde_json::from_value(truthful(&reopened, &batch)).unwrap();
    reopened.submit(&sub).unwrap();
    let copy = tempfile::tempdir().unwrap();
    copy_session(&dir.path().join("session"), &copy.path().join("session"));
    let crashed = AnnotationService::open(
        ExperimentConfig {
            output_dir: copy.path().to_path_buf(),
            ..cfg.clone()
        },
        Path::new("."),
    )
    .unwrap();
    assert_eq!(crashed.state().step, 1);
    assert_eq!(crashed.state().labeled_pixels, 4 * 1024 + 3 * 64);
    assert_eq!(reopened.wait_until_trained(WAIT), Phase::Idle);
    assert_eq!(crashed.wait_until_trained(WAIT), Phase::Idle);
    assert_eq!(crashed.state().metrics, reopened.state().metrics);
}

/// Copies the live snapshot; retried because a finishing retrain may swap it mid-copy.
fn copy_session(from: &Path, to: &Path) {
    for _ in 0..10 {
        let attempt = || -> std::io::Result<()> {
            let name = std::fs::read_to_string(from.join("CURRENT"))?;
            let snap = to.join(name.trim());
            std::fs::create_dir_all(&snap)?;
            for entry in std::fs::read_dir(from.join(name.trim()))? {
                let entry = entry?;
                std::fs::copy(entry.path(), snap.join(entry.file_name()))?;
            }
            std::fs::write(to.join("CURRENT"), name)
        };
        if attempt().is_ok() {
            return;
        }
        let _ = std::fs::remove_dir_all(to);
    }
    panic!("could not copy {}", from.display());
}

#[test]
fn concurrent_submissions_have_one_winner() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _) = open(&config(dir.path(), Strategy::Region));
    let batch = svc.suggestions().unwrap();
    let sub = serde_json::from_value(truthful(&svc, &batch)).unwrap();
    let outcomes: Vec<bool> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4).map(|_| scope.spawn(|| svc.submit(&sub).is_ok())).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert_eq!(outcomes.iter().filter(|ok| **ok).count(), 1);
    assert_eq!(svc.state().labeled_pixels, 4 * 1024 + 3 * 64);
    svc.wait_until_trained(WAIT);
}

#[test]
fn fully_annotated_images_leave_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let (svc, _) = open(&config(dir.path(), Strategy::FullImage));
    let batch = svc.suggestions().unwrap();
    assert_eq!(batch.regions.len(), 2);
    assert!(batch.regions.iter().all(|r| (r.region.height, r.region.width) == (32, 32)));
    let sub = serde_json::from_value(truthful(&svc, &batch)).unwrap();
    let ack = svc.submit(&sub).unwrap();
    assert_eq!(ack.labeled_pixels, 6 * 1024);
    assert_eq!(svc.wait_until_trained(WAIT), Phase::Idle);
    assert_eq!(svc.state().pool_images, 6);
    let next = svc.suggestions().unwrap();
    for r in &next.regions {
        assert!(batch.regions.iter().all(|b| b.region.image_id != r.region.image_id));
    }
}
