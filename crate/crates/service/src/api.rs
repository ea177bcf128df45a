use std::net::SocketAddr;

use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};

use crate::error::ApiError;
use crate::session::{
    Acknowledgment, AnnotationService, AnnotationSubmission, Overlay, StatusDocument, SuggestionBatch,
};

/// Routes of the annotation API over a shared service.
pub fn router(service: AnnotationService) -> Router {
    Router::new()
        .route("/api/state", get(state))
        .route("/api/suggestions", get(suggestions))
        .route("/api/overlay/{id}", get(overlay))
        .route("/api/annotations", post(annotations))
        .route("/api/retrain", post(retrain))
        .with_state(service)
}

/// Serves the API on `addr` until the process is stopped.
pub async fn serve(service: AnnotationService, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service)).await
}

// model work and disk writes stay off the async workers
async fn blocking<T, F>(f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map(Json),
        Err(e) => Err(ApiError::Core(segal::Error::Unsupported(format!("worker panicked: {e}")))),
    }
}

async fn state(State(svc): State<AnnotationService>) -> Json<StatusDocument> {
    Json(svc.state())
}

async fn suggestions(State(svc): State<AnnotationService>) -> Result<Json<SuggestionBatch>, ApiError> {
    blocking(move || svc.suggestions()).await
}

async fn overlay(State(svc): State<AnnotationService>, Path(id): Path<usize>) -> Result<Json<Overlay>, ApiError> {
    blocking(move || svc.overlay(id)).await
}

async fn annotations(
    State(svc): State<AnnotationService>,
    Json(sub): Json<AnnotationSubmission>,
) -> Result<Json<Acknowledgment>, ApiError> {
    blocking(move || svc.submit(&sub)).await
}

async fn retrain(State(svc): State<AnnotationService>) -> Result<Json<StatusDocument>, ApiError> {
    blocking(move || svc.retrain()).await
}
