//! HTTP annotation service: a human replaces the simulated oracle of the region loop.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/state` | [`StatusDocument`] |
//! | GET | `/api/suggestions` | [`SuggestionBatch`], 409 while training |
//! | GET | `/api/overlay/{id}` | [`Overlay`], 404 for unknown ids |
//! | POST | `/api/annotations` | [`Acknowledgment`] for an [`AnnotationSubmission`]; 409 for a stale batch, 422 listing bad pixels |
//! | POST | `/api/retrain` | [`StatusDocument`], 409 while training |
//!
//! Errors carry a JSON body `{"error": kind, "message": ..., "problems": [...]}`.

mod api;
mod error;
mod session;
mod store;

pub use api::{router, serve};
pub use error::{ApiError, PixelProblem, MAX_PROBLEMS};
pub use session::{
    Acknowledgment, AnnotationService, AnnotationSubmission, Overlay, Phase, PseudoLabelRef, RegionLabels,
    StatusDocument, SuggestedRegion, SuggestionBatch,
};
