use crate::acquisition::Region;
use crate::error::{Error, Result};
use crate::grid::LabelMask;

/// Answers annotation requests from ground-truth masks, standing in for a human.
#[derive(Debug, Clone)]
pub struct SimulatedOracle {
    truth: Vec<LabelMask>,
}

impl SimulatedOracle {
    pub fn new(truth: Vec<LabelMask>) -> Self {
        SimulatedOracle { truth }
    }

    fn mask(&self, id: usize) -> Result<&LabelMask> {
        self.truth
            .get(id)
            .ok_or_else(|| Error::invalid(format!("oracle has no image {id}")))
    }

    /// The complete ground-truth mask of image `id`.
    pub fn label_image(&self, id: usize) -> Result<LabelMask> {
        self.mask(id).cloned()
    }

    /// Ground truth inside `region`, row-major over the window.
    pub fn label_region(&self, region: &Region) -> Result<Vec<u8>> {
        let mask = self.mask(region.image_id)?;
        if !region.fits(mask.height(), mask.width()) {
            return Err(Error::invalid(format!("region {region:?} lies outside the image")));
        }
        Ok(region.pixels(mask.width()).map(|i| mask.labels()[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle() -> SimulatedOracle {
        let gt = LabelMask::new(4, 4, (0..16).map(|i| (i % 3 == 0) as u8).collect()).unwrap();
        SimulatedOracle::new(vec![gt])
    }

    #[test]
    fn full_request_returns_mask() {
        let o = oracle();
        assert_eq!(o.label_image(0).unwrap(), o.truth[0]);
        assert!(o.label_image(1).is_err());
    }

    #[test]
    fn region_requests_are_local() {
        let o = oracle();
        let a = Region::new(0, 0, 0, 2, 2);
        let b = Region::new(0, 2, 1, 2, 3);
        let mut union = LabelMask::unlabeled(4, 4);
        for r in [a, b] {
            for (i, l) in r.pixels(4).zip(o.label_region(&r).unwrap()) {
                union.labels_mut()[i] = l;
            }
        }
        for i in 0..16 {
            let (row, col) = (i / 4, i % 4);
            if a.contains(row, col) || b.contains(row, col) {
                assert_eq!(union.labels()[i], o.truth[0].labels()[i]);
            } else {
                assert_eq!(union.labels()[i], crate::grid::UNLABELED);
            }
        }
        assert!(o.label_region(&Region::new(0, 3, 3, 2, 2)).is_err());
    }
}
