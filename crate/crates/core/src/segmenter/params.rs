use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::NetworkConfig;
use crate::error::{Error, Result};

/// Geometry of one convolution layer inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square kernel side (3 for stage convolutions, 1 for heads).
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.weight_offset..self.weight_offset + self.weight_len()
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.bias_offset..self.bias_offset + self.out_channels
    }
}

/// Ordered layer layout: encoder stages, decoder stages (deepest first), main head, contour head.
pub(crate) fn layout(config: &NetworkConfig) -> Vec<LayerSpec> {
    let b = config.encoder_blocks;
    let mut shapes = Vec::with_capacity(2 * b + 2);
    for i in 0..b {
        let cin = if i == 0 {
            config.input_channels
        } else {
            config.stage_width(i - 1)
        };
        shapes.push((format!("enc{i}"), cin, config.stage_width(i), 3));
    }
    for i in (0..b).rev() {
        let up = if i == b - 1 {
            config.stage_width(b - 1)
        } else {
            config.stage_width(i + 1)
        };
        let out = config.stage_width(i);
        shapes.push((format!("dec{i}"), up + out, out, 3));
    }
    shapes.push(("head_main".into(), config.base_width, config.classes, 1));
    shapes.push(("head_aux".into(), config.base_width, config.classes, 1));

    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(name, cin, cout, k)| {
            let weight_offset = offset;
            offset += cout * cin * k * k;
            let bias_offset = offset;
            offset += cout;
            LayerSpec {
                name,
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                weight_offset,
                bias_offset,
            }
        })
        .collect()
}

/// Network weights and biases stored in one flat vector.
///
/// Convolution weights are laid out `[out][in][ky][kx]`. The same type doubles
/// as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    config: NetworkConfig,
    layers: Vec<LayerSpec>,
    values: Vec<f64>,
}

impl Parameters {
    /// Fan-in scaled uniform weights and zero biases, deterministic in `config.seed`.
    pub fn init(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut params = Parameters::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for layer in &params.layers {
            let fan_in = (layer.in_channels * layer.kernel * layer.kernel) as f64;
            let bound = (3.0 / fan_in).sqrt();
            for w in &mut params.values[layer.weight_range()] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layers = layout(config);
        let len = config.parameter_count();
        debug_assert_eq!(
            layers.last().map(|l| l.bias_offset + l.out_channels),
            Some(len)
        );
        Ok(Parameters {
            config: config.clone(),
            layers,
            values: vec![0.0; len],
        })
    }

    pub fn from_flat(config: &NetworkConfig, values: Vec<f64>) -> Result<Self> {
        let mut params = Parameters::zeros(config)?;
        if values.len() != params.values.len() {
            return Err(Error::shape(params.values.len(), values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite parameter value"));
        }
        params.values = values;
        Ok(params)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Flat view over every parameter.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    pub fn weights(&self, layer: &LayerSpec) -> &[f64] {
        &self.values[layer.weight_range()]
    }

    pub fn biases(&self, layer: &LayerSpec) -> &[f64] {
        &self.values[layer.bias_range()]
    }

    /// True for indices that hold convolution weights (as opposed to biases).
    pub fn weight_indicator(&self) -> Vec<bool> {
        let mut mask = vec![false; self.values.len()];
        for layer in &self.layers {
            mask[layer.weight_range()].iter_mut().for_each(|m| *m = true);
        }
        mask
    }

    /// `½ Σ w²` over convolution weights, biases excluded.
    pub fn weight_decay(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| self.weights(l).iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
            * 0.5
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Parameters, scale: f64) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
