use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mc_average, ProbabilityMap, ProbabilityStack};

/// Scoring rule that maps a model's prediction to per-pixel informativeness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AcquisitionFunction {
    Random,
    VarRatio,
    Entropy,
    Bald,
}

impl AcquisitionFunction {
    pub const ALL: [AcquisitionFunction; 4] = [
        AcquisitionFunction::Random,
        AcquisitionFunction::VarRatio,
        AcquisitionFunction::Entropy,
        AcquisitionFunction::Bald,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionFunction::Random => "RANDOM",
            AcquisitionFunction::VarRatio => "VARRATIO",
            AcquisitionFunction::Entropy => "ENTROPY",
            AcquisitionFunction::Bald => "BALD",
        }
    }

    /// Largest value the function can take for `classes` classes
    /// (`1 - 1/C` for VarRatio, `ln C` for Entropy and BALD, 1 for Random).
    pub fn analytic_max(self, classes: usize) -> f64 {
        match self {
            AcquisitionFunction::Random => 1.0,
            AcquisitionFunction::VarRatio => 1.0 - 1.0 / classes as f64,
            AcquisitionFunction::Entropy | AcquisitionFunction::Bald => (classes as f64).ln(),
        }
    }

    /// Whether scoring needs the model's MC prediction at all.
    pub fn needs_prediction(self) -> bool {
        self != AcquisitionFunction::Random
    }
}

impl std::fmt::Display for AcquisitionFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AcquisitionFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AcquisitionFunction::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown acquisition function `{s}`")))
    }
}

/// Non-negative per-pixel uncertainty, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    source: AcquisitionFunction,
}

/// Values this far below zero are rounding noise and are clamped.
const NEGATIVE_SLACK: f64 = 1e-12;

impl UncertaintyMap {
    pub fn new(
        height: usize,
        width: usize,
        mut values: Vec<f64>,
        source: AcquisitionFunction,
    ) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(height * width, values.len()));
        }
        for v in values.iter_mut() {
            if !v.is_finite() || *v < -NEGATIVE_SLACK {
                return Err(Error::invalid(format!("invalid uncertainty value {v}")));
            }
            *v = v.max(0.0);
        }
        Ok(UncertaintyMap {
            height,
            width,
            values,
            source,
        })
    }

    fn from_clamped(height: usize, width: usize, values: Vec<f64>, source: AcquisitionFunction) -> Self {
        UncertaintyMap {
            height,
            width,
            values: values.into_iter().map(|v| v.max(0.0)).collect(),
            source,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn source(&self) -> AcquisitionFunction {
        self.source
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Same map with every value multiplied by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> UncertaintyMap {
        UncertaintyMap {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// `1 - max_c p_c` per pixel.
pub fn varratio_map(p: &ProbabilityMap) -> UncertaintyMap {
    let values = p
        .pixels()
        .map(|px| 1.0 - px.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    UncertaintyMap::from_clamped(p.height(), p.width(), values, AcquisitionFunction::VarRatio)
}

/// Predictive entropy `-Σ p ln p` per pixel, with `0 ln 0 = 0`.
pub fn entropy_map(p: &ProbabilityMap) -> UncertaintyMap {
    let values = p.pixels().map(entropy).collect();
    UncertaintyMap::from_clamped(p.height(), p.width(), values, AcquisitionFunction::Entropy)
}

/// Mutual information between prediction and weights: entropy of the mean
/// prediction minus the mean per-pass entropy, clamped at zero.
pub fn bald_map(stack: &ProbabilityStack) -> UncertaintyMap {
    let mean = mc_average(stack);
    let t = stack.passes() as f64;
    let first: Vec<f64> = stack.maps()[0].pixels().map(entropy).collect();
    // mean per-pass entropy, accumulated as deviations from the first pass
    let mut dev = vec![0.0; first.len()];
    for map in &stack.maps()[1..] {
        for ((d, px), f) in dev.iter_mut().zip(map.pixels()).zip(&first) {
            *d += entropy(px) - f;
        }
    }
    let values = mean
        .pixels()
        .zip(first.iter().zip(&dev))
        .map(|(px, (f, d))| entropy(px) - (f + d / t))
        .collect();
    UncertaintyMap::from_clamped(stack.height(), stack.width(), values, AcquisitionFunction::Bald)
}

/// I.i.d. uniform `[0, 1)` values, the random-selection baseline.
pub fn random_map<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> UncertaintyMap {
    let values = (0..height * width).map(|_| rng.gen::<f64>()).collect();
    UncertaintyMap::from_clamped(height, width, values, AcquisitionFunction::Random)
}

/// Dispatches to the map matching `function`. `stack` may be `None` only for Random.
pub fn uncertainty_map<R: Rng + ?Sized>(
    function: AcquisitionFunction,
    stack: Option<&ProbabilityStack>,
    height: usize,
    width: usize,
    rng: &mut R,
) -> Result<UncertaintyMap> {
    let need = || Error::invalid(format!("{function} needs an MC prediction"));
    Ok(match function {
        AcquisitionFunction::Random => random_map(height, width, rng),
        AcquisitionFunction::VarRatio => varratio_map(&mc_average(stack.ok_or_else(need)?)),
        AcquisitionFunction::Entropy => entropy_map(&mc_average(stack.ok_or_else(need)?)),
        AcquisitionFunction::Bald => bald_map(stack.ok_or_else(need)?),
    })
}

/// Utility of a whole image: the sum of its pixel uncertainties.
pub fn image_utility(u: &UncertaintyMap) -> f64 {
    u.values.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn px(v: &[f64]) -> ProbabilityMap {
        ProbabilityMap::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    fn stack(maps: &[&[f64]]) -> ProbabilityStack {
        ProbabilityStack::new(maps.iter().map(|m| px(m)).collect()).unwrap()
    }

    #[test]
    fn varratio_examples() {
        assert_eq!(varratio_map(&px(&[0.5, 0.5])).values(), &[0.5]);
        assert_eq!(varratio_map(&px(&[1.0, 0.0])).values(), &[0.0]);
        assert!((varratio_map(&px(&[0.7, 0.3])).values()[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy_map(&px(&[0.5, 0.5])).values()[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy_map(&px(&[1.0, 0.0])).values(), &[0.0]);
        let e = entropy_map(&px(&[0.7, 0.3])).values()[0];
        assert_eq!((e * 1e4).round() / 1e4, 0.6109);
    }

    #[test]
    fn bald_examples() {
        let same = bald_map(&stack(&[&[0.3, 0.7], &[0.3, 0.7], &[0.3, 0.7]]));
        assert_eq!(same.values(), &[0.0]);
        let opposite = bald_map(&stack(&[&[1.0, 0.0], &[0.0, 1.0]]));
        assert!((opposite.values()[0] - 2f64.ln()).abs() < 1e-15);
        let mixed = bald_map(&stack(&[&[0.8, 0.2], &[0.6, 0.4]])).values()[0];
        // H(0.7,0.3) - (H(0.8,0.2) + H(0.6,0.4)) / 2
        let h = |p: f64| -(p * p.ln() + (1.0 - p) * (1.0 - p).ln());
        let expected = h(0.7) - 0.5 * (h(0.8) + h(0.6));
        assert!((mixed - expected).abs() < 1e-12);
        assert_eq!((mixed * 1e4).round() / 1e4, 0.0242);
    }

    #[test]
    fn utility_sums_pixels() {
        let m = UncertaintyMap::new(2, 3, vec![0.5; 6], AcquisitionFunction::Entropy).unwrap();
        assert_eq!(image_utility(&m), 3.0);
        let z = UncertaintyMap::new(2, 2, vec![0.0; 4], AcquisitionFunction::Entropy).unwrap();
        assert_eq!(image_utility(&z), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_map(3, 3, &mut rng);
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += r.get(i, j);
            }
        }
        assert!((image_utility(&r) - s).abs() < 1e-12);
    }

    #[test]
    fn random_map_properties() {
        let a = random_map(100, 100, &mut ChaCha8Rng::seed_from_u64(11));
        let b = random_map(100, 100, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let mean = image_utility(&a) / 10_000.0;
        assert!((0.48..=0.52).contains(&mean), "mean {mean}");
    }

    #[test]
    fn negative_noise_is_clamped() {
        let m = UncertaintyMap::new(1, 2, vec![-1e-13, 0.2], AcquisitionFunction::Bald).unwrap();
        assert_eq!(m.values(), &[0.0, 0.2]);
        assert!(UncertaintyMap::new(1, 1, vec![-0.1], AcquisitionFunction::Bald).is_err());
    }

    #[test]
    fn parses_names() {
        assert_eq!("bald".parse::<AcquisitionFunction>().unwrap(), AcquisitionFunction::Bald);
        assert!("foo".parse::<AcquisitionFunction>().is_err());
    }
}
