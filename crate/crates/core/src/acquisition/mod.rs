//! Uncertainty scoring and the two acquisition strategies: whole images ranked
//! by summed uncertainty, and fixed-size windows selected greedily across the pool.

mod region;
mod state;
mod uncertainty;

pub use region::{
    mask_selected, region_scores, select_images, select_regions, Region, RegionScoringConfig,
    ScoredRegion, Selection, WindowScore,
};
pub use state::{merge_pseudo_labels, prepare_pseudo_labels, AnnotationState, ImageAnnotation};
pub use uncertainty::{
    bald_map, entropy_map, image_utility, random_map, uncertainty_map, varratio_map,
    AcquisitionFunction, UncertaintyMap,
};
