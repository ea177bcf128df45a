//! Window scoring and greedy selection of image regions and whole images.

use serde::{Deserialize, Serialize};

use super::uncertainty::UncertaintyMap;
use crate::error::{Error, Result};

/// Window geometry and batch size for region acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionScoringConfig {
    pub k_w: usize,
    pub k_h: usize,
    /// Stride between window placements, in pixels, along both axes.
    pub k_s: usize,
    /// Uniform kernel weight.
    pub k_v: f64,
    /// Regions selected per acquisition step.
    pub m: usize,
}

impl Default for RegionScoringConfig {
    fn default() -> Self {
        RegionScoringConfig {
            k_w: 16,
            k_h: 16,
            k_s: 8,
            k_v: 1.0,
            m: 20,
        }
    }
}

impl RegionScoringConfig {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.k_w == 0 || self.k_h == 0 || self.k_w > width || self.k_h > height {
            return Err(Error::invalid(format!(
                "window {}x{} does not fit a {height}x{width} image",
                self.k_h, self.k_w
            )));
        }
        if self.k_s == 0 || self.m == 0 || !(self.k_v > 0.0 && self.k_v.is_finite()) {
            return Err(Error::invalid("stride and region count must be positive, k_v > 0"));
        }
        Ok(())
    }

    /// Window area in pixels.
    pub fn area(&self) -> usize {
        self.k_w * self.k_h
    }
}

/// An axis-aligned window inside one pool image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Region {
    pub image_id: usize,
    pub top: usize,
    pub left: usize,
    #[serde(rename = "k_h")]
    pub height: usize,
    #[serde(rename = "k_w")]
    pub width: usize,
}

impl Region {
    pub fn new(image_id: usize, top: usize, left: usize, height: usize, width: usize) -> Self {
        Region {
            image_id,
            top,
            left,
            height,
            width,
        }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.height && col >= self.left && col < self.left + self.width
    }

    pub fn overlaps(&self, other: &Region) -> bool {
        self.image_id == other.image_id
            && self.top < other.top + other.height
            && other.top < self.top + self.height
            && self.left < other.left + other.width
            && other.left < self.left + self.width
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.height > 0 && self.width > 0 && self.top + self.height <= height && self.left + self.width <= width
    }

    /// Row-major pixel indices covered by the window in an image of width `image_width`.
    pub fn pixels(&self, image_width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.top..self.top + self.height)
            .flat_map(move |r| (self.left..self.left + self.width).map(move |c| r * image_width + c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredRegion {
    pub region: Region,
    pub score: f64,
}

/// Score of one window placement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowScore {
    pub top: usize,
    pub left: usize,
    pub score: f64,
}

/// Summed-area table with a zero top row and left column.
struct SummedArea {
    width: usize,
    table: Vec<f64>,
}

impl SummedArea {
    fn new(map: &UncertaintyMap) -> Self {
        let (h, w) = (map.height(), map.width());
        let stride = w + 1;
        let mut table = vec![0.0; (h + 1) * stride];
        for r in 0..h {
            let mut row_sum = 0.0;
            for c in 0..w {
                row_sum += map.get(r, c);
                table[(r + 1) * stride + c + 1] = table[r * stride + c + 1] + row_sum;
            }
        }
        SummedArea { width: stride, table }
    }

    fn window(&self, top: usize, left: usize, height: usize, width: usize) -> f64 {
        let s = self.width;
        let (b, r) = (top + height, left + width);
        self.table[b * s + r] - self.table[top * s + r] - self.table[b * s + left] + self.table[top * s + left]
    }
}

fn placements(extent: usize, window: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=extent - window).step_by(stride)
}

/// Window sums times `k_v` for every stride-grid placement fully inside the map,
/// ordered by `(top, left)`.
pub fn region_scores(u: &UncertaintyMap, cfg: &RegionScoringConfig) -> Result<Vec<WindowScore>> {
    cfg.validate(u.height(), u.width())?;
    let sat = SummedArea::new(u);
    let mut out = Vec::new();
    for top in placements(u.height(), cfg.k_h, cfg.k_s) {
        for left in placements(u.width(), cfg.k_w, cfg.k_s) {
            let sum = sat.window(top, left, cfg.k_h, cfg.k_w);
            // rounding in the table can leave tiny negatives on zeroed windows
            let score = cfg.k_v * sum.max(0.0);
            out.push(WindowScore { top, left, score });
        }
    }
    Ok(out)
}

/// Zeroes every pixel covered by one of `regions`.
pub fn mask_selected(u: &UncertaintyMap, regions: &[Region]) -> Result<UncertaintyMap> {
    let mut out = u.clone();
    for r in regions {
        if !r.fits(u.height(), u.width()) {
            return Err(Error::invalid(format!(
                "region {r:?} lies outside the {}x{} map",
                u.height(),
                u.width()
            )));
        }
        let w = u.width();
        let values = out.values_mut();
        for idx in r.pixels(w) {
            values[idx] = 0.0;
        }
    }
    Ok(out)
}

/// Outcome of a greedy selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection<T> {
    pub items: Vec<T>,
    /// Set when fewer than the requested number of items could be returned.
    pub short: bool,
}

/// Greedy batch selection of `cfg.m` windows across all pool images.
///
/// Previously selected regions are zeroed first. Each round takes the global
/// maximum-score window among placements disjoint from every selected region
/// (ties go to the smaller image id, then top, then left), zeroes it and
/// rescores its image. Only windows with a positive score qualify.
pub fn select_regions(
    pool: &[(usize, &UncertaintyMap)],
    cfg: &RegionScoringConfig,
    already_selected: &[Region],
) -> Result<Selection<ScoredRegion>> {
    if pool.is_empty() {
        return Err(Error::invalid("region selection over an empty pool"));
    }
    struct Entry {
        image_id: usize,
        map: UncertaintyMap,
        scores: Vec<WindowScore>,
        taken: Vec<Region>,
    }
    let mut entries = Vec::with_capacity(pool.len());
    for &(image_id, map) in pool {
        let prior: Vec<Region> = already_selected
            .iter()
            .filter(|r| r.image_id == image_id)
            .copied()
            .collect();
        let map = mask_selected(map, &prior)?;
        let scores = region_scores(&map, cfg)?;
        entries.push(Entry {
            image_id,
            map,
            scores,
            taken: prior,
        });
    }
    entries.sort_by_key(|e| e.image_id);

    let mut picked = Vec::with_capacity(cfg.m);
    while picked.len() < cfg.m {
        let mut best: Option<(usize, WindowScore)> = None;
        for (ei, e) in entries.iter().enumerate() {
            for ws in &e.scores {
                if ws.score <= 0.0 {
                    continue;
                }
                if best.as_ref().is_some_and(|(_, b)| ws.score <= b.score) {
                    continue;
                }
                let cand = Region::new(e.image_id, ws.top, ws.left, cfg.k_h, cfg.k_w);
                if e.taken.iter().any(|t| t.overlaps(&cand)) {
                    continue;
                }
                best = Some((ei, *ws));
            }
        }
        let Some((ei, ws)) = best else { break };
        let e = &mut entries[ei];
        let region = Region::new(e.image_id, ws.top, ws.left, cfg.k_h, cfg.k_w);
        e.map = mask_selected(&e.map, &[region])?;
        e.scores = region_scores(&e.map, cfg)?;
        e.taken.push(region);
        picked.push(ScoredRegion {
            region,
            score: ws.score,
        });
    }
    if picked.len() < cfg.m {
        log::warn!(
            "only {} of {} requested regions have positive uncertainty",
            picked.len(),
            cfg.m
        );
    }
    Ok(Selection {
        short: picked.len() < cfg.m,
        items: picked,
    })
}

/// The `m` highest-utility image ids, ties broken by smaller id.
pub fn select_images(scores: &[(usize, f64)], m: usize) -> Selection<usize> {
    let mut ranked = scores.to_vec();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = ranked.len() < m;
    if short {
        log::warn!("pool has {} images, {m} requested", ranked.len());
    }
    Selection {
        items: ranked.into_iter().take(m).map(|(id, _)| id).collect(),
        short,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::acquisition::AcquisitionFunction;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn map(h: usize, w: usize, v: Vec<f64>) -> UncertaintyMap {
        UncertaintyMap::new(h, w, v, AcquisitionFunction::Entropy).unwrap()
    }

    fn cfg(k: usize, s: usize, m: usize) -> RegionScoringConfig {
        RegionScoringConfig {
            k_w: k,
            k_h: k,
            k_s: s,
            k_v: 1.0,
            m,
        }
    }

    #[test]
    fn four_by_four_example() {
        #[rustfmt::skip]
        let u = map(4, 4, vec![
            1., 0., 0., 0.,
            0., 1., 0., 0.,
            0., 0., 3., 0.,
            0., 0., 0., 2.,
        ]);
        let s = region_scores(&u, &cfg(2, 2, 1)).unwrap();
        let got: Vec<_> = s.iter().map(|w| (w.top, w.left, w.score)).collect();
        assert_eq!(got, vec![(0, 0, 2.0), (0, 2, 0.0), (2, 0, 0.0), (2, 2, 5.0)]);
    }

    #[test]
    fn zero_map_scores_zero_and_kv_scales() {
        let z = map(5, 5, vec![0.0; 25]);
        assert!(region_scores(&z, &cfg(2, 1, 1)).unwrap().iter().all(|w| w.score == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = map(6, 7, (0..42).map(|_| rng.gen()).collect());
        let one = region_scores(&u, &cfg(3, 2, 1)).unwrap();
        let two = region_scores(&u, &RegionScoringConfig { k_v: 2.0, ..cfg(3, 2, 1) }).unwrap();
        for (a, b) in one.iter().zip(&two) {
            assert_eq!(2.0 * a.score, b.score);
        }
    }

    #[test]
    fn sat_matches_naive_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (h, w) = (rng.gen_range(3..12), rng.gen_range(3..12));
            let u = map(h, w, (0..h * w).map(|_| rng.gen()).collect());
            let c = RegionScoringConfig {
                k_w: rng.gen_range(1..=w),
                k_h: rng.gen_range(1..=h),
                k_s: rng.gen_range(1..4),
                k_v: 1.0,
                m: 1,
            };
            for ws in region_scores(&u, &c).unwrap() {
                let mut naive = 0.0;
                for r in ws.top..ws.top + c.k_h {
                    for col in ws.left..ws.left + c.k_w {
                        naive += u.get(r, col);
                    }
                }
                assert!((naive - ws.score).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mask_selected_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = map(6, 6, (0..36).map(|_| rng.gen::<f64>() + 0.1).collect());
        let all = mask_selected(&u, &[Region::new(0, 0, 0, 6, 6)]).unwrap();
        assert!(all.values().iter().all(|v| *v == 0.0));
        assert_eq!(mask_selected(&u, &[]).unwrap(), u);
        let regions = [Region::new(0, 1, 1, 3, 3), Region::new(0, 2, 2, 3, 2)];
        let masked = mask_selected(&u, &regions).unwrap();
        for r in 0..6 {
            for c in 0..6 {
                let inside = regions.iter().any(|g| g.contains(r, c));
                assert_eq!(masked.get(r, c), if inside { 0.0 } else { u.get(r, c) });
            }
        }
        assert!(mask_selected(&u, &[Region::new(0, 4, 4, 3, 3)]).is_err());
    }

    #[test]
    fn single_step_picks_argmax_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = map(8, 8, (0..64).map(|_| rng.gen()).collect());
        let c = cfg(3, 1, 1);
        let sel = select_regions(&[(0, &u)], &c, &[]).unwrap();
        let best = region_scores(&u, &c)
            .unwrap()
            .into_iter()
            .fold(None::<WindowScore>, |b, w| match b {
                Some(b) if b.score >= w.score => Some(b),
                _ => Some(w),
            })
            .unwrap();
        assert_eq!(sel.items.len(), 1);
        assert_eq!((sel.items[0].region.top, sel.items[0].region.left), (best.top, best.left));
        assert!(!sel.short);
    }

    #[test]
    fn covered_map_yields_nothing() {
        let u = map(4, 4, vec![1.0; 16]);
        let prior = [
            Region::new(0, 0, 0, 2, 2),
            Region::new(0, 0, 2, 2, 2),
            Region::new(0, 2, 0, 2, 2),
            Region::new(0, 2, 2, 2, 2),
        ];
        let sel = select_regions(&[(0, &u)], &cfg(2, 2, 3), &prior).unwrap();
        assert!(sel.items.is_empty());
        assert!(sel.short);
    }

    #[test]
    fn selections_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = map(10, 10, (0..100).map(|_| rng.gen()).collect());
        let b = map(10, 10, (0..100).map(|_| rng.gen()).collect());
        let prior = [Region::new(1, 3, 3, 3, 3)];
        let sel = select_regions(&[(0, &a), (1, &b)], &cfg(3, 1, 8), &prior).unwrap();
        let all: Vec<Region> = sel.items.iter().map(|s| s.region).chain(prior).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert!(!all[i].overlaps(&all[j]), "{:?} {:?}", all[i], all[j]);
            }
        }
        let scores: Vec<f64> = sel.items.iter().map(|s| s.score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn select_images_examples() {
        assert_eq!(select_images(&[(0, 3.0), (1, 1.0), (2, 2.0)], 2).items, vec![0, 2]);
        assert_eq!(select_images(&[(4, 1.0), (2, 1.0), (3, 1.0)], 1).items, vec![2]);
        let all = select_images(&[(0, 1.0), (1, 2.0)], 5);
        assert_eq!(all.items, vec![1, 0]);
        assert!(all.short);
    }
}
