//! Grid types shared by every stage of the pipeline.
//!
//! All grids are stored row-major with `(row, col, channel)` indexing. Shape
//! mismatches are always reported as errors; nothing is broadcast.

use crate::error::{Error, Result};

/// Tolerance used when checking that a pixel's class values form a simplex point.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// Sentinel for pixels that carry no label.
pub const UNLABELED: u8 = u8::MAX;

/// A multi-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::shape(height * width * channels, values.len()));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::invalid(format!("image value {v} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.width + col) * self.channels + channel]
    }
}

/// Per-pixel class ids, with [`UNLABELED`] marking pixels without a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(height * width, labels.len()));
        }
        Ok(LabelMask {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMask {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn unlabeled(height: usize, width: usize) -> Self {
        Self::filled(height, width, UNLABELED)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, label: u8) {
        self.labels[row * self.width + col] = label;
    }

    /// Checks that every non-sentinel label is below `classes`.
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != UNLABELED && l as usize >= classes)
        {
            Some(i) => Err(Error::invalid(format!(
                "label {} at pixel ({}, {}) is not below class count {classes}",
                self.labels[i],
                i / self.width,
                i % self.width
            ))),
            None => Ok(()),
        }
    }

    pub fn same_shape(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(Error::shape(
                format!("{height}x{width}"),
                format!("{}x{}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// Per-pixel class probabilities; each pixel is a point on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, classes: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || classes == 0 {
            return Err(Error::invalid("probability map dimensions must be positive"));
        }
        if values.len() != height * width * classes {
            return Err(Error::shape(height * width * classes, values.len()));
        }
        for (i, px) in values.chunks_exact(classes).enumerate() {
            let sum: f64 = px.iter().sum();
            if px.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::invalid(format!(
                    "pixel ({}, {}) is not a simplex point: {px:?}",
                    i / width,
                    i % width
                )));
            }
        }
        Ok(ProbabilityMap {
            height,
            width,
            classes,
            values,
        })
    }

    pub(crate) fn from_trusted(height: usize, width: usize, classes: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), height * width * classes);
        ProbabilityMap {
            height,
            width,
            classes,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.classes..(index + 1) * self.classes]
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.classes)
    }

    /// Argmax labels, lower class id winning ties.
    pub fn argmax(&self) -> LabelMask {
        let labels = self.pixels().map(|p| argmax(p) as u8).collect();
        LabelMask {
            height: self.height,
            width: self.width,
            labels,
        }
    }

    fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.height, self.width, self.classes)
    }
}

/// Index of the largest value; the first index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// The `T` per-pass probability maps of an MC-dropout prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityStack {
    maps: Vec<ProbabilityMap>,
}

impl ProbabilityStack {
    pub fn new(maps: Vec<ProbabilityMap>) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::invalid("probability stack needs at least one pass"))?;
        for m in &maps[1..] {
            if m.height != first.height || m.width != first.width || m.classes != first.classes {
                return Err(Error::shape(first.shape_string(), m.shape_string()));
            }
        }
        Ok(ProbabilityStack { maps })
    }

    pub fn passes(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[ProbabilityMap] {
        &self.maps
    }

    pub fn height(&self) -> usize {
        self.maps[0].height
    }

    pub fn width(&self) -> usize {
        self.maps[0].width
    }

    pub fn classes(&self) -> usize {
        self.maps[0].classes
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit in {logits:?}")));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

/// Softmax over a slice of finite logits, overwriting it.
pub(crate) fn softmax_in_place(values: &mut [f64]) {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

/// Per-pixel arithmetic mean of the passes in `stack`.
///
/// Accumulated as deviations from the first pass so that identical passes
/// average to exactly that pass.
pub fn mc_average(stack: &ProbabilityStack) -> ProbabilityMap {
    let first = &stack.maps[0];
    let t = stack.maps.len() as f64;
    let mut dev = vec![0.0; first.values.len()];
    for m in &stack.maps[1..] {
        for ((acc, v), f) in dev.iter_mut().zip(&m.values).zip(&first.values) {
            *acc += v - f;
        }
    }
    let values = first
        .values
        .iter()
        .zip(&dev)
        .map(|(f, d)| f + d / t)
        .collect();
    ProbabilityMap::from_trusted(first.height, first.width, first.classes, values)
}

/// One-hot encoding of `label` over `classes` classes.
pub fn one_hot(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::invalid(format!(
            "label {label} is not below class count {classes}"
        )));
    }
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ProbabilityMap {
        let mut values = Vec::with_capacity(h * w * c);
        for _ in 0..h * w {
            let logits: Vec<f64> = (0..c).map(|_| rng.gen_range(-3.0..3.0)).collect();
            values.extend(softmax(&logits).unwrap());
        }
        ProbabilityMap::new(h, w, c, values).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for x in [-7.0, 0.0, 3.5, 1e3] {
            let p = softmax(&[x, x, x]).unwrap();
            for v in p {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let p = softmax(&[2.0, 0.0]).unwrap();
        assert_eq!((p[0] * 1e4).round() / 1e4, 0.8808);
        assert_eq!((p[1] * 1e4).round() / 1e4, 0.1192);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(softmax(&[0.0, f64::NAN]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn mc_average_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_map(&mut rng, 3, 4, 2);
        let single = ProbabilityStack::new(vec![m.clone()]).unwrap();
        assert_eq!(mc_average(&single), m);

        let a = ProbabilityMap::new(1, 1, 2, vec![0.8, 0.2]).unwrap();
        let b = ProbabilityMap::new(1, 1, 2, vec![0.6, 0.4]).unwrap();
        let avg = mc_average(&ProbabilityStack::new(vec![a, b]).unwrap());
        assert!((avg.values()[0] - 0.7).abs() < 1e-15);
        assert!((avg.values()[1] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn mc_average_matches_reference_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let maps: Vec<_> = (0..10).map(|_| random_map(&mut rng, 4, 5, 3)).collect();
        let avg = mc_average(&ProbabilityStack::new(maps.clone()).unwrap());
        for r in 0..4 {
            for c in 0..5 {
                for k in 0..3 {
                    let idx = (r * 5 + c) * 3 + k;
                    let mut s = 0.0;
                    for m in &maps {
                        s += m.values()[idx];
                    }
                    assert!((avg.values()[idx] - s / 10.0).abs() < 1e-12);
                }
            }
        }
        ProbabilityMap::new(4, 5, 3, avg.values().to_vec()).unwrap();
    }

    #[test]
    fn empty_stack_is_rejected() {
        assert!(ProbabilityStack::new(vec![]).is_err());
    }

    #[test]
    fn mismatched_stack_is_rejected() {
        let a = ProbabilityMap::new(1, 1, 2, vec![0.5, 0.5]).unwrap();
        let b = ProbabilityMap::new(1, 2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(
            ProbabilityStack::new(vec![a, b]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(0, 2).unwrap(), vec![1.0, 0.0]);
        assert_eq!(one_hot(1, 2).unwrap(), vec![0.0, 1.0]);
        assert_eq!(one_hot(3, 5).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(one_hot(2, 2).is_err());
    }

    #[test]
    fn probability_map_rejects_non_simplex() {
        assert!(ProbabilityMap::new(1, 1, 2, vec![0.6, 0.6]).is_err());
        assert!(ProbabilityMap::new(1, 1, 2, vec![1.1, -0.1]).is_err());
    }

    #[test]
    fn image_rejects_out_of_range() {
        assert!(Image::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Image::new(0, 1, 1, vec![]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(logits in prop::collection::vec(-20.0f64..20.0, 1..6), shift in -50.0f64..50.0) {
            let a = softmax(&logits).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let b = softmax(&shifted).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn mc_average_is_bounded_and_permutation_invariant(seed in 0u64..1000, t in 1usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let maps: Vec<_> = (0..t).map(|_| random_map(&mut rng, 2, 3, 3)).collect();
            let avg = mc_average(&ProbabilityStack::new(maps.clone()).unwrap());
            let mut reversed = maps.clone();
            reversed.reverse();
            let avg_rev = mc_average(&ProbabilityStack::new(reversed).unwrap());
            for (i, v) in avg.values().iter().enumerate() {
                let lo = maps.iter().map(|m| m.values()[i]).fold(f64::INFINITY, f64::min);
                let hi = maps.iter().map(|m| m.values()[i]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(*v >= lo - 1e-15 && *v <= hi + 1e-15);
                prop_assert!((v - avg_rev.values()[i]).abs() < 1e-15);
            }
        }
    }
}
