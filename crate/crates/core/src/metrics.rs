//! Object-level F1, object-level Dice and the Jaccard index.
//!
//! Objects are 8-connected components of one foreground class. Matching is
//! greedy by descending IoU, the usual gland-segmentation evaluation.

use crate::error::Result;
use crate::grid::LabelMask;

/// Connected components of one class; pixels are sorted row-major indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectSet {
    pub height: usize,
    pub width: usize,
    pub objects: Vec<Vec<usize>>,
}

impl ObjectSet {
    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    fn owner_map(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.height * self.width];
        for (k, obj) in self.objects.iter().enumerate() {
            for &p in obj {
                owner[p] = Some(k);
            }
        }
        owner
    }
}

/// 8-connected components of the pixels labeled `class`, ordered by their
/// first pixel in raster order (smallest row, then smallest column).
pub fn connected_components(mask: &LabelMask, class: u8) -> ObjectSet {
    let (h, w) = (mask.height(), mask.width());
    let labels = mask.labels();
    let mut seen = vec![false; h * w];
    let mut objects = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if seen[start] || labels[start] != class {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut obj = Vec::new();
        while let Some(p) = stack.pop() {
            obj.push(p);
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let q = nr as usize * w + nc as usize;
                    if !seen[q] && labels[q] == class {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        obj.sort_unstable();
        objects.push(obj);
    }
    ObjectSet {
        height: h,
        width: w,
        objects,
    }
}

/// `|pred ∩ gt| / |pred ∪ gt|` for `class`, 1 when both are empty.
pub fn jaccard(pred: &LabelMask, gt: &LabelMask, class: u8) -> Result<f64> {
    gt.same_shape(pred.height(), pred.width())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (p, g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (*p == class, *g == class);
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Pixel overlap counts between every predicted and ground-truth object pair
/// that share at least one pixel: `(pred, gt, intersection)`.
fn overlaps(pred: &ObjectSet, gt: &ObjectSet) -> Vec<(usize, usize, usize)> {
    let owner = gt.owner_map();
    let mut out = Vec::new();
    for (i, obj) in pred.objects.iter().enumerate() {
        let mut counts: Vec<(usize, usize)> = Vec::new();
        for &p in obj {
            if let Some(j) = owner[p] {
                match counts.iter_mut().find(|(k, _)| *k == j) {
                    Some((_, n)) => *n += 1,
                    None => counts.push((j, 1)),
                }
            }
        }
        counts.sort_unstable();
        out.extend(counts.into_iter().map(|(j, n)| (i, j, n)));
    }
    out
}

/// Result of greedy one-to-one matching.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `(pred index, gt index, IoU)` in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Greedy matching by descending IoU over all overlapping pairs (ties go to
/// the smaller predicted index, then the smaller ground-truth index).
pub fn match_objects(pred: &ObjectSet, gt: &ObjectSet) -> MatchResult {
    let mut cands: Vec<(usize, usize, f64)> = overlaps(pred, gt)
        .into_iter()
        .map(|(i, j, n)| {
            let union = pred.objects[i].len() + gt.objects[j].len() - n;
            (i, j, n as f64 / union as f64)
        })
        .collect();
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut used_p = vec![false; pred.len()];
    let mut used_g = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (i, j, iou) in cands {
        if !used_p[i] && !used_g[j] {
            used_p[i] = true;
            used_g[j] = true;
            pairs.push((i, j, iou));
        }
    }
    MatchResult {
        pairs,
        unmatched_pred: (0..pred.len()).filter(|i| !used_p[*i]).collect(),
        unmatched_gt: (0..gt.len()).filter(|j| !used_g[*j]).collect(),
    }
}

/// Detection counts; sums over images give pooled precision and recall.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DetectionCounts {
    pub true_positives: usize,
    pub predicted: usize,
    pub ground_truth: usize,
}

impl DetectionCounts {
    pub fn merge(self, other: DetectionCounts) -> DetectionCounts {
        DetectionCounts {
            true_positives: self.true_positives + other.true_positives,
            predicted: self.predicted + other.predicted,
            ground_truth: self.ground_truth + other.ground_truth,
        }
    }

    /// `(precision, recall, F1)`; a zero denominator gives 0.
    pub fn scores(&self) -> (f64, f64, f64) {
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let p = ratio(self.true_positives, self.predicted);
        let r = ratio(self.true_positives, self.ground_truth);
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f1)
    }
}

pub fn detection_counts(pred: &ObjectSet, gt: &ObjectSet, tau: f64) -> DetectionCounts {
    let m = match_objects(pred, gt);
    DetectionCounts {
        true_positives: m.pairs.iter().filter(|(_, _, iou)| *iou > tau).count(),
        predicted: pred.len(),
        ground_truth: gt.len(),
    }
}

/// Default IoU threshold for a detection to count.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Object-level `(precision, recall, F1)`.
pub fn object_f1(pred: &ObjectSet, gt: &ObjectSet, tau: f64) -> (f64, f64, f64) {
    detection_counts(pred, gt, tau).scores()
}

/// Area-weighted object Dice between the foreground (class 1) components of
/// two masks. Each object is compared with the counterpart it overlaps most;
/// an object without a counterpart scores 0. Two empty masks score 1.
pub fn object_dice(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    gt.same_shape(pred.height(), pred.width())?;
    let p = connected_components(pred, 1);
    let g = connected_components(gt, 1);
    if p.is_empty() && g.is_empty() {
        return Ok(1.0);
    }
    Ok(0.5 * (weighted_dice(&g, &p) + weighted_dice(&p, &g)))
}

/// `Σ_i ω_i Dice(A_i, B*(A_i))` with `ω_i = |A_i| / Σ|A|`.
fn weighted_dice(a: &ObjectSet, b: &ObjectSet) -> f64 {
    let total: usize = a.objects.iter().map(Vec::len).sum();
    if total == 0 {
        return 0.0;
    }
    let mut best: Vec<Option<(usize, usize)>> = vec![None; a.len()];
    for (i, j, n) in overlaps(a, b) {
        // overlaps lists j ascending per i, so strict > keeps the smaller index on ties
        if best[i].map_or(true, |(_, m)| n > m) {
            best[i] = Some((j, n));
        }
    }
    a.objects
        .iter()
        .zip(&best)
        .map(|(obj, hit)| match hit {
            Some((j, n)) => {
                let dice = 2.0 * *n as f64 / (obj.len() + b.objects[*j].len()) as f64;
                obj.len() as f64 / total as f64 * dice
            }
            None => 0.0,
        })
        .sum()
}

/// Per-image segmentation scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationScores {
    pub counts: DetectionCounts,
    pub dice_obj: f64,
    pub jaccard: f64,
}

pub fn segmentation_scores(pred: &LabelMask, gt: &LabelMask, tau: f64) -> Result<SegmentationScores> {
    gt.same_shape(pred.height(), pred.width())?;
    Ok(SegmentationScores {
        counts: detection_counts(&connected_components(pred, 1), &connected_components(gt, 1), tau),
        dice_obj: object_dice(pred, gt)?,
        jaccard: jaccard(pred, gt, 1)?,
    })
}

/// Test-set summary: F1 from pooled detection counts, Dice and Jaccard
/// averaged over images in input order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentationSummary {
    pub f1: f64,
    pub dice_obj: f64,
    pub jaccard: f64,
}

pub fn summarize(scores: &[SegmentationScores]) -> SegmentationSummary {
    let n = scores.len().max(1) as f64;
    let counts = scores
        .iter()
        .fold(DetectionCounts::default(), |acc, s| acc.merge(s.counts));
    SegmentationSummary {
        f1: counts.scores().2,
        dice_obj: scores.iter().map(|s| s.dice_obj).sum::<f64>() / n,
        jaccard: scores.iter().map(|s| s.jaccard).sum::<f64>() / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(rows: &[&str]) -> LabelMask {
        let w = rows[0].len();
        let labels = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| (b == b'#') as u8))
            .collect();
        LabelMask::new(rows.len(), w, labels).unwrap()
    }

    #[test]
    fn components_examples() {
        assert!(connected_components(&mask(&["...", "..."]), 1).is_empty());
        let sq = connected_components(&mask(&["....", ".##.", ".##.", "...."]), 1);
        assert_eq!(sq.objects, vec![vec![5, 6, 9, 10]]);
        let diag = connected_components(&mask(&["#.", ".#"]), 1);
        assert_eq!(diag.len(), 1);
        let two = connected_components(&mask(&["..#", "...", "#.."]), 1);
        assert_eq!(two.objects, vec![vec![2], vec![6]]);
    }

    #[test]
    fn jaccard_examples() {
        let a = mask(&["##..", "##..", "...."]);
        let b = mask(&[".##.", ".##.", "...."]);
        assert_eq!(jaccard(&a, &a, 1).unwrap(), 1.0);
        assert!((jaccard(&a, &b, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let c = mask(&["....", "....", "..##"]);
        assert_eq!(jaccard(&a, &c, 1).unwrap(), 0.0);
        let e = mask(&["....", "....", "...."]);
        assert_eq!(jaccard(&e, &e, 1).unwrap(), 1.0);
    }

    #[test]
    fn f1_examples() {
        let gt = connected_components(&mask(&["##...", "##..#", "....#"]), 1);
        assert_eq!(object_f1(&gt, &gt, 0.5), (1.0, 1.0, 1.0));
        let empty = connected_components(&mask(&[".....", ".....", "....."]), 1);
        assert_eq!(object_f1(&empty, &gt, 0.5), (0.0, 0.0, 0.0));
        let one = connected_components(&mask(&["##...", "##...", "....."]), 1);
        let (p, r, f1) = object_f1(&one, &gt, 0.5);
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn low_iou_match_is_not_a_detection() {
        let gt = connected_components(&mask(&["####", "####"]), 1);
        let pred = connected_components(&mask(&["#...", "...."]), 1);
        assert_eq!(match_objects(&pred, &gt).pairs.len(), 1);
        assert_eq!(object_f1(&pred, &gt, 0.5), (0.0, 0.0, 0.0));
        assert_eq!(object_f1(&pred, &gt, 0.1).0, 1.0);
    }

    #[test]
    fn dice_examples() {
        let gt = mask(&["....", ".##.", ".##.", "...."]);
        assert_eq!(object_dice(&gt, &gt).unwrap(), 1.0);
        let empty = mask(&["....", "....", "....", "...."]);
        assert_eq!(object_dice(&empty, &gt).unwrap(), 0.0);
        let half = mask(&["....", ".##.", "....", "...."]);
        assert!((object_dice(&half, &gt).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dice_uses_area_weights() {
        // big object matched exactly, small one missed: gt side 4/5, pred side 1
        let gt = mask(&["##..#", "##..."]);
        let pred = mask(&["##...", "##..."]);
        let d = object_dice(&pred, &gt).unwrap();
        assert!((d - 0.5 * (0.8 + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn summary_pools_counts() {
        let gt = mask(&["#.#"]);
        let pred = mask(&["#.."]);
        let s1 = segmentation_scores(&pred, &gt, 0.5).unwrap();
        let s2 = segmentation_scores(&gt, &gt, 0.5).unwrap();
        let sum = summarize(&[s1, s2]);
        // TP 3, predicted 3, gt 4
        let (p, r) = (1.0, 0.75);
        assert!((sum.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn arb_mask() -> impl Strategy<Value = LabelMask> {
            (1usize..=8, 1usize..=8).prop_flat_map(|(h, w)| {
                proptest::collection::vec(0u8..2, h * w)
                    .prop_map(move |v| LabelMask::new(h, w, v).unwrap())
            })
        }

        // union-find oracle over 8-neighbour edges
        fn oracle_components(m: &LabelMask) -> Vec<Vec<usize>> {
            let (h, w) = (m.height(), m.width());
            let mut parent: Vec<usize> = (0..h * w).collect();
            fn find(p: &mut Vec<usize>, x: usize) -> usize {
                if p[x] != x {
                    let r = find(p, p[x]);
                    p[x] = r;
                }
                p[x]
            }
            for a in 0..h * w {
                for b in 0..h * w {
                    let (ra, ca, rb, cb) = (a / w, a % w, b / w, b % w);
                    let adj = ra.abs_diff(rb) <= 1 && ca.abs_diff(cb) <= 1;
                    if adj && m.labels()[a] == 1 && m.labels()[b] == 1 {
                        let (x, y) = (find(&mut parent, a), find(&mut parent, b));
                        parent[x] = y;
                    }
                }
            }
            let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
            for i in 0..h * w {
                if m.labels()[i] == 1 {
                    let r = find(&mut parent, i);
                    groups.entry(r).or_default().push(i);
                }
            }
            let mut out: Vec<Vec<usize>> = groups.into_values().collect();
            out.sort();
            out
        }

        proptest! {
            #[test]
            fn components_match_union_find(m in arb_mask()) {
                let got = connected_components(&m, 1).objects;
                let mut sorted = got.clone();
                sorted.sort();
                // raster ordering by first pixel is the same as sorting by first element
                prop_assert_eq!(&got, &sorted);
                prop_assert_eq!(sorted, oracle_components(&m));
            }

            #[test]
            fn metrics_bounded_symmetric_and_reflexive(a in arb_mask(), seed in any::<u64>()) {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let b = LabelMask::new(a.height(), a.width(),
                    (0..a.labels().len()).map(|_| rng.gen_range(0..2)).collect()).unwrap();
                let (j, d) = (jaccard(&a, &b, 1).unwrap(), object_dice(&a, &b).unwrap());
                prop_assert!((0.0..=1.0).contains(&j) && (0.0..=1.0).contains(&d));
                prop_assert_eq!(j, jaccard(&b, &a, 1).unwrap());
                prop_assert!((d - object_dice(&b, &a).unwrap()).abs() < 1e-12);
                prop_assert_eq!(jaccard(&a, &a, 1).unwrap(), 1.0);
                prop_assert!((object_dice(&a, &a).unwrap() - 1.0).abs() < 1e-12);
                let (oa, ob) = (connected_components(&a, 1), connected_components(&b, 1));
                if !oa.is_empty() {
                    prop_assert_eq!(object_f1(&oa, &oa, 0.5), (1.0, 1.0, 1.0));
                }
                let mut last = f64::INFINITY;
                for tau in [0.05, 0.2, 0.5, 0.8, 1.0] {
                    let f = object_f1(&oa, &ob, tau).2;
                    prop_assert!((0.0..=1.0).contains(&f) && f <= last);
                    last = f;
                }
            }
        }
    }
}
