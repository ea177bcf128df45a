use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and stochasticity of the miniature encoder-decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Number of encoder stages; each halves the spatial resolution.
    pub encoder_blocks: usize,
    /// Channel count of the first stage; stage `i` has `base_width << i`.
    pub base_width: usize,
    /// Probability of dropping a unit in front of each encoder stage.
    pub dropout_rate: f64,
    pub classes: usize,
    pub input_channels: usize,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_blocks: 3,
            base_width: 8,
            dropout_rate: 0.5,
            classes: 2,
            input_channels: 1,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_blocks == 0 {
            return Err(Error::Config("encoder_blocks must be at least 1".into()));
        }
        if self.base_width == 0 || self.classes < 2 || self.input_channels == 0 {
            return Err(Error::Config(
                "base_width and input_channels must be positive and classes at least 2".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    /// Channels produced by encoder stage `stage`.
    pub fn stage_width(&self, stage: usize) -> usize {
        self.base_width << stage
    }

    /// Spatial dimensions must be divisible by this factor.
    pub fn size_divisor(&self) -> usize {
        1 << self.encoder_blocks
    }

    /// Closed-form length of the flat parameter vector.
    ///
    /// With `B` stages, width `w`, `c_in` input channels and `C` classes:
    ///
    /// ```text
    /// encoder i : 9 * cin_i * (w 2^i) + w 2^i        cin_0 = c_in, cin_i = w 2^(i-1)
    /// decoder i : 9 * (up_i + w 2^i) * (w 2^i) + w 2^i
    ///             up_(B-1) = w 2^(B-1), up_i = w 2^(i+1)
    /// heads     : 2 * (w * C + C)
    /// ```
    pub fn parameter_count(&self) -> usize {
        let b = self.encoder_blocks;
        let mut total = 0;
        for i in 0..b {
            let cin = if i == 0 {
                self.input_channels
            } else {
                self.stage_width(i - 1)
            };
            let out = self.stage_width(i);
            total += 9 * cin * out + out;
        }
        for i in 0..b {
            let up = if i == b - 1 {
                self.stage_width(b - 1)
            } else {
                self.stage_width(i + 1)
            };
            let out = self.stage_width(i);
            total += 9 * (up + out) * out + out;
        }
        total + 2 * (self.base_width * self.classes + self.classes)
    }
}

/// Weights of the three terms of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight-decay coefficient on the squared convolution weights.
    pub lambda: f64,
    /// Weight of the contour (auxiliary) head's cross-entropy.
    pub aux_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1e-4,
            aux_weight: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.aux_weight >= 0.0) {
            return Err(Error::Config("lambda and aux_weight must be non-negative".into()));
        }
        Ok(())
    }
}
