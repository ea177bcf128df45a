//! Calibration metrics pooled over every labeled pixel of a test set.

use serde::Serialize;

use crate::acquisition::UncertaintyMap;
use crate::error::{Error, Result};
use crate::grid::{argmax, LabelMask, ProbabilityMap, UNLABELED};

/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_BINS: usize = 10;

fn check_pair(p: &ProbabilityMap, l: &LabelMask) -> Result<()> {
    l.same_shape(p.height(), p.width())?;
    l.validate(p.classes())
}

/// Iterates `(probabilities, label)` over labeled pixels of every pair.
fn labeled_pixels<'a>(
    preds: &'a [ProbabilityMap],
    labels: &'a [LabelMask],
) -> Result<impl Iterator<Item = (&'a [f64], usize)> + 'a> {
    if preds.len() != labels.len() {
        return Err(Error::shape(
            format!("{} label masks", preds.len()),
            labels.len(),
        ));
    }
    for (p, l) in preds.iter().zip(labels) {
        check_pair(p, l)?;
    }
    Ok(preds.iter().zip(labels).flat_map(|(p, l)| {
        p.pixels()
            .zip(l.labels())
            .filter(|(_, y)| **y != UNLABELED)
            .map(|(px, y)| (px, *y as usize))
    }))
}

/// Mean negative log-likelihood of the true class.
pub fn nll(preds: &[ProbabilityMap], labels: &[LabelMask]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (px, y) in labeled_pixels(preds, labels)? {
        sum -= px[y].clamp(PROB_FLOOR, 1.0).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoLabeledData("no labeled pixels to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Mean over pixels of `(1/C) Σ_c (p_c - y_c)²`.
pub fn brier(preds: &[ProbabilityMap], labels: &[LabelMask]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (px, y) in labeled_pixels(preds, labels)? {
        let c = px.len() as f64;
        sum += px
            .iter()
            .enumerate()
            .map(|(k, p)| (p - (k == y) as u8 as f64).powi(2))
            .sum::<f64>()
            / c;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoLabeledData("no labeled pixels to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Index of the equal-width bin holding `v ∈ [0, 1]`: bin `k` (0-based) covers
/// `(k/K, (k+1)/K]`, and 0 falls in the first bin.
pub fn bin_index(v: f64, bins: usize) -> usize {
    let k = bins as f64;
    let mut idx = ((v * k).ceil() as usize).saturating_sub(1).min(bins - 1);
    // correct for rounding in v * K so membership matches the edges below
    while idx > 0 && v <= idx as f64 / k {
        idx -= 1;
    }
    while idx + 1 < bins && v > (idx + 1) as f64 / k {
        idx += 1;
    }
    idx
}

/// Confidence/accuracy accumulators over equal-width bins of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBins {
    pub counts: Vec<usize>,
    pub confidence_sums: Vec<f64>,
    pub correct_sums: Vec<f64>,
}

impl ReliabilityBins {
    pub fn new(bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::invalid("bin count must be at least 1"));
        }
        Ok(ReliabilityBins {
            counts: vec![0; bins],
            confidence_sums: vec![0.0; bins],
            correct_sums: vec![0.0; bins],
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Bin edges `0, 1/K, ..., 1`.
    pub fn edges(&self) -> Vec<f64> {
        let k = self.bins();
        (0..=k).map(|i| i as f64 / k as f64).collect()
    }

    pub fn add(&mut self, confidence: f64, correct: bool) {
        let k = bin_index(confidence, self.bins());
        self.counts[k] += 1;
        self.confidence_sums[k] += confidence;
        self.correct_sums[k] += correct as u8 as f64;
    }

    /// Adds every labeled pixel of one prediction.
    pub fn add_map(&mut self, pred: &ProbabilityMap, labels: &LabelMask) -> Result<()> {
        check_pair(pred, labels)?;
        for (px, y) in pred.pixels().zip(labels.labels()) {
            if *y != UNLABELED {
                let k = argmax(px);
                self.add(px[k], k == *y as usize);
            }
        }
        Ok(())
    }

    /// Combines accumulators; the operation is associative and commutative.
    pub fn merge(&mut self, other: &ReliabilityBins) -> Result<()> {
        if other.bins() != self.bins() {
            return Err(Error::shape(self.bins(), other.bins()));
        }
        for k in 0..self.bins() {
            self.counts[k] += other.counts[k];
            self.confidence_sums[k] += other.confidence_sums[k];
            self.correct_sums[k] += other.correct_sums[k];
        }
        Ok(())
    }

    pub fn confidence(&self, k: usize) -> Option<f64> {
        (self.counts[k] > 0).then(|| self.confidence_sums[k] / self.counts[k] as f64)
    }

    pub fn accuracy(&self, k: usize) -> Option<f64> {
        (self.counts[k] > 0).then(|| self.correct_sums[k] / self.counts[k] as f64)
    }
}

/// Bins max-softmax confidence against argmax correctness (lower class wins ties).
pub fn bin_predictions(
    preds: &[ProbabilityMap],
    labels: &[LabelMask],
    bins: usize,
) -> Result<ReliabilityBins> {
    let mut out = ReliabilityBins::new(bins)?;
    if preds.len() != labels.len() {
        return Err(Error::shape(preds.len(), labels.len()));
    }
    for (p, l) in preds.iter().zip(labels) {
        out.add_map(p, l)?;
    }
    Ok(out)
}

/// Expected calibration error `Σ_k (|B_k|/n) |acc(B_k) - conf(B_k)|`.
pub fn ece(bins: &ReliabilityBins) -> Result<f64> {
    let n = bins.total();
    if n == 0 {
        return Err(Error::NoLabeledData("no samples binned".into()));
    }
    Ok((0..bins.bins())
        .filter(|k| bins.counts[*k] > 0)
        .map(|k| (bins.correct_sums[k] - bins.confidence_sums[k]).abs() / n as f64)
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiagramRow {
    pub center: f64,
    /// `None` for an empty bin.
    pub confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub count: usize,
}

pub fn reliability_diagram(bins: &ReliabilityBins) -> Vec<DiagramRow> {
    let k = bins.bins() as f64;
    (0..bins.bins())
        .map(|i| DiagramRow {
            center: (i as f64 + 0.5) / k,
            confidence: bins.confidence(i),
            accuracy: bins.accuracy(i),
            count: bins.counts[i],
        })
        .collect()
}

/// Murphy decomposition of the binary Brier score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BrierDecomposition {
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    /// Brier score after replacing each forecast by its bin's mean forecast;
    /// equals `reliability - resolution + uncertainty`.
    pub binned_brier: f64,
}

/// Decomposes the positive-class (class 1) forecasts into `bins` equal-width bins.
pub fn brier_decomposition(
    preds: &[ProbabilityMap],
    labels: &[LabelMask],
    bins: usize,
) -> Result<BrierDecomposition> {
    if let Some(p) = preds.iter().find(|p| p.classes() != 2) {
        return Err(Error::Unsupported(format!(
            "Brier decomposition needs a binary task, got {} classes",
            p.classes()
        )));
    }
    let stream: Vec<(f64, bool)> = labeled_pixels(preds, labels)?
        .map(|(px, y)| (px[1], y == 1))
        .collect();
    decompose_binary(&stream, bins)
}

/// Decomposition of a stream of `(forecast, outcome)` pairs.
pub fn decompose_binary(stream: &[(f64, bool)], bins: usize) -> Result<BrierDecomposition> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    if stream.is_empty() {
        return Err(Error::NoLabeledData("no labeled pixels to evaluate".into()));
    }
    let mut count = vec![0usize; bins];
    let mut fsum = vec![0.0; bins];
    let mut osum = vec![0.0; bins];
    for &(f, o) in stream {
        let k = bin_index(f.clamp(0.0, 1.0), bins);
        count[k] += 1;
        fsum[k] += f;
        osum[k] += o as u8 as f64;
    }
    let n = stream.len() as f64;
    let base = osum.iter().sum::<f64>() / n;
    let (mut rel, mut res, mut within) = (0.0, 0.0, 0.0);
    for k in (0..bins).filter(|k| count[*k] > 0) {
        let nk = count[k] as f64;
        let (pk, ok) = (fsum[k] / nk, osum[k] / nk);
        rel += nk / n * (pk - ok).powi(2);
        res += nk / n * (ok - base).powi(2);
        within += nk / n * ok * (1.0 - ok);
    }
    Ok(BrierDecomposition {
        reliability: rel,
        resolution: res,
        uncertainty: base * (1.0 - base),
        binned_brier: rel + within,
    })
}

/// Histogram of uncertainties over the selected pixels, each value divided by
/// the acquisition function's analytic maximum for `classes`, normalized to sum 1.
pub fn uncertainty_histogram(
    maps: &[(&UncertaintyMap, &[bool])],
    classes: usize,
    bins: usize,
) -> Result<Vec<f64>> {
    if bins == 0 {
        return Err(Error::invalid("bin count must be at least 1"));
    }
    let mut hist = vec![0.0; bins];
    let mut n = 0usize;
    for (map, sel) in maps {
        if sel.len() != map.values().len() {
            return Err(Error::shape(map.values().len(), sel.len()));
        }
        let max = map.source().analytic_max(classes);
        for (v, _) in map.values().iter().zip(*sel).filter(|(_, s)| **s) {
            let u = if max > 0.0 { (v / max).clamp(0.0, 1.0) } else { 0.0 };
            let k = ((u * bins as f64) as usize).min(bins - 1);
            hist[k] += 1.0;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("uncertainty histogram needs a non-empty selection"));
    }
    hist.iter_mut().for_each(|h| *h /= n as f64);
    Ok(hist)
}

/// All calibration numbers for one acquisition step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub step: usize,
    pub nll: f64,
    pub ece: f64,
    pub brier: f64,
    pub reliability: f64,
    pub resolution: f64,
    pub uncertainty: f64,
    pub bins: ReliabilityBins,
}

/// Computes every metric; the decomposition terms are NaN for non-binary tasks.
pub fn calibration_report(
    step: usize,
    preds: &[ProbabilityMap],
    labels: &[LabelMask],
    bins: usize,
) -> Result<CalibrationReport> {
    let rb = bin_predictions(preds, labels, bins)?;
    let dec = match brier_decomposition(preds, labels, bins) {
        Ok(d) => d,
        Err(Error::Unsupported(_)) => BrierDecomposition {
            reliability: f64::NAN,
            resolution: f64::NAN,
            uncertainty: f64::NAN,
            binned_brier: f64::NAN,
        },
        Err(e) => return Err(e),
    };
    Ok(CalibrationReport {
        step,
        nll: nll(preds, labels)?,
        ece: ece(&rb)?,
        brier: brier(preds, labels)?,
        reliability: dec.reliability,
        resolution: dec.resolution,
        uncertainty: dec.uncertainty,
        bins: rb,
    })
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn stream() -> impl Strategy<Value = Vec<(f64, bool)>> {
        proptest::collection::vec((0.0f64..=1.0, any::<bool>()), 1..200)
    }

    // direct per-sample evaluation with bin-mean forecasts
    fn brute_binned_brier(s: &[(f64, bool)], k: usize) -> f64 {
        let mut out = 0.0;
        for b in 0..k {
            let members: Vec<&(f64, bool)> = s.iter().filter(|(f, _)| bin_index(*f, k) == b).collect();
            if members.is_empty() {
                continue;
            }
            let mean = members.iter().map(|(f, _)| f).sum::<f64>() / members.len() as f64;
            out += members.iter().map(|(_, o)| (mean - *o as u8 as f64).powi(2)).sum::<f64>();
        }
        out / s.len() as f64
    }

    proptest! {
        #[test]
        fn decomposition_identity(s in stream(), k in prop::sample::select(vec![1usize, 5, 10, 20])) {
            let d = decompose_binary(&s, k).unwrap();
            prop_assert!((d.reliability - d.resolution + d.uncertainty - d.binned_brier).abs() < 1e-10);
            prop_assert!((d.binned_brier - brute_binned_brier(&s, k)).abs() < 1e-10);
            prop_assert!((0.0..=0.25 + 1e-15).contains(&d.uncertainty));
            if k == 1 {
                prop_assert_eq!(d.resolution, 0.0);
                let pbar = s.iter().map(|x| x.0).sum::<f64>() / s.len() as f64;
                let obar = s.iter().filter(|x| x.1).count() as f64 / s.len() as f64;
                prop_assert!((d.reliability - (pbar - obar).powi(2)).abs() < 1e-12);
            }
        }

        #[test]
        fn ece_bounded_and_permutation_invariant(s in stream(), k in 1usize..20) {
            let mut a = ReliabilityBins::new(k).unwrap();
            let mut b = ReliabilityBins::new(k).unwrap();
            for (c, o) in &s {
                a.add(0.5 + c / 2.0, *o);
            }
            for (c, o) in s.iter().rev() {
                b.add(0.5 + c / 2.0, *o);
            }
            let (ea, eb) = (ece(&a).unwrap(), ece(&b).unwrap());
            prop_assert!((0.0..=1.0).contains(&ea));
            prop_assert!((ea - eb).abs() < 1e-12);
        }

        #[test]
        fn brier_bounded(s in stream()) {
            let px: Vec<f64> = s.iter().flat_map(|(p, _)| [1.0 - p, *p]).collect();
            let m = ProbabilityMap::new(1, s.len(), 2, px).unwrap();
            let l = LabelMask::new(1, s.len(), s.iter().map(|x| x.1 as u8).collect()).unwrap();
            let b = brier(&[m], &[l]).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }
    }
}
