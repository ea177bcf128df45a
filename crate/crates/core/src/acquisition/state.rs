use super::region::Region;
use crate::error::{Error, Result};
use crate::grid::{Image, LabelMask, UNLABELED};
use crate::segmenter::{mc_predict, Parameters};

/// Human annotations and guidance labels for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation {
    pub human_mask: Vec<bool>,
    pub human_labels: LabelMask,
    /// Model predictions on pixels the human has not labeled.
    pub pseudo_labels: Option<LabelMask>,
    pub selected_regions: Vec<Region>,
}

impl ImageAnnotation {
    pub fn empty(height: usize, width: usize) -> Self {
        ImageAnnotation {
            human_mask: vec![false; height * width],
            human_labels: LabelMask::unlabeled(height, width),
            pseudo_labels: None,
            selected_regions: Vec::new(),
        }
    }

    pub fn labeled_pixels(&self) -> usize {
        self.human_mask.iter().filter(|m| **m).count()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.human_mask.iter().all(|m| *m)
    }

    /// Human labels where available, pseudo-labels elsewhere, [`UNLABELED`] otherwise.
    pub fn composite_labels(&self) -> LabelMask {
        let mut out = self.human_labels.clone();
        if let Some(pseudo) = &self.pseudo_labels {
            for ((o, m), p) in out
                .labels_mut()
                .iter_mut()
                .zip(&self.human_mask)
                .zip(pseudo.labels())
            {
                if !*m {
                    *o = *p;
                }
            }
        }
        out
    }
}

/// Annotation record for every image of the training split, indexed by image id.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationState {
    height: usize,
    width: usize,
    images: Vec<ImageAnnotation>,
}

impl AnnotationState {
    pub fn new(image_count: usize, height: usize, width: usize) -> Self {
        AnnotationState {
            height,
            width,
            images: (0..image_count)
                .map(|_| ImageAnnotation::empty(height, width))
                .collect(),
        }
    }

    pub fn from_images(height: usize, width: usize, images: Vec<ImageAnnotation>) -> Result<Self> {
        for img in &images {
            img.human_labels.same_shape(height, width)?;
            if img.human_mask.len() != height * width {
                return Err(Error::shape(height * width, img.human_mask.len()));
            }
        }
        Ok(AnnotationState {
            height,
            width,
            images,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: usize) -> Option<&ImageAnnotation> {
        self.images.get(id)
    }

    pub fn images(&self) -> &[ImageAnnotation] {
        &self.images
    }

    fn image_mut(&mut self, id: usize) -> Result<&mut ImageAnnotation> {
        let n = self.images.len();
        self.images
            .get_mut(id)
            .ok_or_else(|| Error::invalid(format!("image id {id} out of range ({n} images)")))
    }

    /// Records a complete human annotation of image `id`.
    pub fn annotate_full(&mut self, id: usize, labels: &LabelMask) -> Result<()> {
        labels.same_shape(self.height, self.width)?;
        if labels.labels().contains(&UNLABELED) {
            return Err(Error::invalid("full annotation contains unlabeled pixels"));
        }
        let img = self.image_mut(id)?;
        img.human_labels = labels.clone();
        img.human_mask.iter_mut().for_each(|m| *m = true);
        img.pseudo_labels = None;
        Ok(())
    }

    /// Records a human annotation of `region`; `labels` is the dense `k_h x k_w` grid.
    pub fn annotate_region(&mut self, region: Region, labels: &[u8]) -> Result<()> {
        if !region.fits(self.height, self.width) {
            return Err(Error::invalid(format!("region {region:?} lies outside the image")));
        }
        if labels.len() != region.area() {
            return Err(Error::shape(region.area(), labels.len()));
        }
        if labels.contains(&UNLABELED) {
            return Err(Error::invalid("region annotation contains unlabeled pixels"));
        }
        let width = self.width;
        let img = self.image_mut(region.image_id)?;
        if img.selected_regions.iter().any(|r| r.overlaps(&region)) {
            return Err(Error::invalid(format!(
                "region {region:?} overlaps an earlier selection"
            )));
        }
        for (idx, label) in region.pixels(width).zip(labels) {
            img.human_mask[idx] = true;
            img.human_labels.labels_mut()[idx] = *label;
        }
        img.selected_regions.push(region);
        Ok(())
    }

    pub fn set_pseudo_labels(&mut self, id: usize, labels: LabelMask) -> Result<()> {
        labels.same_shape(self.height, self.width)?;
        self.image_mut(id)?.pseudo_labels = Some(labels);
        Ok(())
    }

    /// Cardinality of the union of human-annotated pixels.
    pub fn labeled_pixels(&self) -> usize {
        self.images.iter().map(ImageAnnotation::labeled_pixels).sum()
    }

    /// Ids of images with at least one human-labeled pixel.
    pub fn labeled_images(&self) -> Vec<usize> {
        (0..self.images.len())
            .filter(|&i| self.images[i].human_mask.iter().any(|m| *m))
            .collect()
    }

    /// All regions selected so far, in image order.
    pub fn selected_regions(&self) -> Vec<Region> {
        self.images
            .iter()
            .flat_map(|i| i.selected_regions.iter().copied())
            .collect()
    }
}

/// Human labels where the mask is set, MC-averaged argmax elsewhere (lower
/// class wins ties).
pub fn prepare_pseudo_labels(
    params: &Parameters,
    image: &Image,
    human_mask: &[bool],
    human_labels: &LabelMask,
    passes: usize,
    seed: u64,
) -> Result<LabelMask> {
    let (h, w) = (image.height(), image.width());
    human_labels.same_shape(h, w)?;
    if human_mask.len() != h * w {
        return Err(Error::shape(h * w, human_mask.len()));
    }
    if human_mask.iter().all(|m| *m) {
        return Ok(human_labels.clone());
    }
    let (mean, _) = mc_predict(params, image, passes, seed)?;
    merge_pseudo_labels(&mean.argmax(), human_mask, human_labels)
}

/// Overlays human labels on an existing prediction.
pub fn merge_pseudo_labels(
    predicted: &LabelMask,
    human_mask: &[bool],
    human_labels: &LabelMask,
) -> Result<LabelMask> {
    human_labels.same_shape(predicted.height(), predicted.width())?;
    if human_mask.len() != predicted.labels().len() {
        return Err(Error::shape(predicted.labels().len(), human_mask.len()));
    }
    let mut out = human_labels.clone();
    for ((o, m), p) in out.labels_mut().iter_mut().zip(human_mask).zip(predicted.labels()) {
        if !*m {
            *o = *p;
        }
    }
    Ok(out)
}
