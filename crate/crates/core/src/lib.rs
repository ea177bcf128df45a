//! Active learning for image segmentation.

pub mod acquisition;
pub mod calibration;
pub mod data;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod orchestrator;
pub mod segmenter;

pub use error::{Error, Result};
