//! Procedural gland-like images: bright textured ellipses on a textured background.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Record, Split};
use crate::error::{Error, Result};
use crate::grid::{Image, LabelMask};

/// Generator settings. Ranges are inclusive `[lo, hi]` pairs sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub train_images: usize,
    pub test_images: usize,
    pub height: usize,
    pub width: usize,
    /// Number of ellipses placed per image.
    pub objects: (usize, usize),
    /// Semi-axis lengths in pixels.
    pub axis: (f64, f64),
    /// Mean background level, drawn once per image.
    pub background: (f64, f64),
    /// Mean object level, drawn once per object.
    pub foreground: (f64, f64),
    /// Amplitude of the smooth sinusoidal texture shared by object and background.
    pub texture: f64,
    /// Standard deviation of i.i.d. Gaussian pixel noise.
    pub noise: f64,
    /// Minimum gap in pixels between the bounding circles of two objects.
    pub gap: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            train_images: 40,
            test_images: 20,
            height: 64,
            width: 96,
            objects: (1, 4),
            axis: (5.0, 12.0),
            background: (0.25, 0.45),
            foreground: (0.5, 0.75),
            texture: 0.1,
            noise: 0.1,
            gap: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height == 0 || self.width == 0 {
            return bad("image size must be positive".into());
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return bad(format!("object range {:?} must be non-empty and start at 1 or more", self.objects));
        }
        if !(self.axis.0 >= 1.0 && self.axis.0 <= self.axis.1) {
            return bad(format!("axis range {:?} must be non-empty with lengths of at least 1", self.axis));
        }
        let diameter = 2.0 * self.axis.1 + 1.0;
        if diameter > self.height.min(self.width) as f64 {
            return bad(format!(
                "largest object (diameter {diameter}) does not fit a {}x{} image",
                self.height, self.width
            ));
        }
        for (name, (lo, hi)) in [("background", self.background), ("foreground", self.foreground)] {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return bad(format!("{name} range ({lo}, {hi}) must be non-empty within [0, 1]"));
            }
        }
        if !(self.texture >= 0.0 && self.noise >= 0.0 && self.gap >= 0.0) {
            return bad("texture, noise and gap must be non-negative".into());
        }
        Ok(())
    }

    /// Checks the size against a network's downsampling factor.
    pub fn check_divisible(&self, divisor: usize) -> Result<()> {
        if self.height % divisor != 0 || self.width % divisor != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} is not divisible by {divisor}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    level: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

struct Wave {
    ky: f64,
    kx: f64,
    phase: f64,
}

/// Up to this many placement attempts per object before it is dropped.
const PLACEMENT_ATTEMPTS: usize = 200;

fn generate_one(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> (Image, LabelMask) {
    let (h, w) = (cfg.height, cfg.width);
    let bg = rng.gen_range(cfg.background.0..=cfg.background.1);
    let waves: Vec<Wave> = (0..3)
        .map(|_| {
            let freq = rng.gen_range(0.03..0.15) * std::f64::consts::TAU;
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            Wave {
                ky: freq * angle.sin(),
                kx: freq * angle.cos(),
                phase: rng.gen_range(0.0..std::f64::consts::TAU),
            }
        })
        .collect();

    let count = rng.gen_range(cfg.objects.0..=cfg.objects.1);
    let mut objects: Vec<Ellipse> = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.gen_range(cfg.axis.0..=cfg.axis.1);
        let b = rng.gen_range(cfg.axis.0..=cfg.axis.1);
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let level = rng.gen_range(cfg.foreground.0..=cfg.foreground.1);
        let r = a.max(b);
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cy = rng.gen_range(r..=(h as f64 - 1.0 - r));
            let cx = rng.gen_range(r..=(w as f64 - 1.0 - r));
            let clear = objects.iter().all(|o| {
                let d = ((o.cy - cy).powi(2) + (o.cx - cx).powi(2)).sqrt();
                d > o.a.max(o.b) + r + cfg.gap
            });
            if clear {
                objects.push(Ellipse {
                    cy,
                    cx,
                    a,
                    b,
                    cos: theta.cos(),
                    sin: theta.sin(),
                    level,
                });
                break;
            }
        }
    }

    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut values = Vec::with_capacity(h * w);
    let mut labels = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (yf, xf) = (y as f64, x as f64);
            let texture: f64 = waves
                .iter()
                .map(|k| (k.ky * yf + k.kx * xf + k.phase).sin())
                .sum::<f64>()
                * cfg.texture
                / waves.len() as f64;
            let (base, label) = match objects.iter().find(|o| o.contains(yf, xf)) {
                Some(o) => (o.level, 1),
                None => (bg, 0),
            };
            let eps = if cfg.noise > 0.0 { noise.sample(rng) } else { 0.0 };
            let v = (base + texture + eps).clamp(0.0, 1.0);
            // quantize to 8 bits so PNG round trips are exact
            values.push((v * 255.0).round() / 255.0);
            labels.push(label);
        }
    }
    (
        Image::new(h, w, 1, values).expect("values in range"),
        LabelMask::new(h, w, labels).expect("sizes agree"),
    )
}

/// Builds `train_images + test_images` records, deterministic in `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total = cfg.train_images + cfg.test_images;
    let records = (0..total)
        .map(|i| {
            let (image, mask) = generate_one(cfg, &mut rng);
            let (split, id) = if i < cfg.train_images {
                (Split::Train, format!("train_{i:03}"))
            } else {
                (Split::Test, format!("test_{:03}", i - cfg.train_images))
            };
            Record {
                id,
                image,
                mask,
                split,
            }
        })
        .collect();
    Ok(Dataset {
        classes: 2,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            train_images: 3,
            test_images: 2,
            height: 32,
            width: 48,
            axis: (3.0, 7.0),
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn masks_are_binary_and_split_counts_match() {
        let ds = generate_synthetic(&small()).unwrap();
        assert_eq!(ds.train().len(), 3);
        assert_eq!(ds.test().len(), 2);
        for r in &ds.records {
            assert!(r.mask.labels().iter().all(|l| *l <= 1));
            assert!(r.mask.labels().contains(&1), "{} has no object", r.id);
        }
    }

    #[test]
    fn mean_foreground_fraction_matches_ellipse_areas() {
        let cfg = SyntheticConfig {
            train_images: 100,
            test_images: 0,
            ..SyntheticConfig::default()
        };
        let ds = generate_synthetic(&cfg).unwrap();
        let observed = ds
            .records
            .iter()
            .map(|r| r.mask.labels().iter().filter(|l| **l == 1).count() as f64)
            .sum::<f64>()
            / (100 * cfg.height * cfg.width) as f64;
        // E[count] * pi * E[a] * E[b] / (H W) with independent uniform axes
        let mean_count = (cfg.objects.0 + cfg.objects.1) as f64 / 2.0;
        let mean_axis = (cfg.axis.0 + cfg.axis.1) / 2.0;
        let expected =
            mean_count * std::f64::consts::PI * mean_axis * mean_axis / (cfg.height * cfg.width) as f64;
        assert!(
            (observed - expected).abs() <= 0.2 * expected,
            "observed {observed}, expected {expected}"
        );
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(generate_synthetic(&SyntheticConfig { objects: (3, 2), ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { axis: (0.5, 2.0), ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { axis: (3.0, 40.0), ..small() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { foreground: (0.9, 0.1), ..small() }).is_err());
        assert!(small().check_divisible(16).is_ok());
        assert!(small().check_divisible(64).is_err());
    }
}
