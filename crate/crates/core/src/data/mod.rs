//! Dataset ingestion, contour labels, resampling and the synthetic generator.

mod contour;
mod dataset;
mod resize;
mod synthetic;

pub use contour::{extract_contours, sobel_edges, CONTOUR_DILATION_RADIUS};
pub use dataset::{
    decode_image_png, decode_mask_png, encode_image_png, encode_mask_png, load_dataset, read_image_png,
    read_mask_png, save_dataset, write_image_png, write_mask_png, Dataset, DatasetManifest, ManifestRecord, Record, Split,
};
pub use resize::{downsample_bilinear, downsample_labels};
pub use synthetic::{generate_synthetic, SyntheticConfig};
