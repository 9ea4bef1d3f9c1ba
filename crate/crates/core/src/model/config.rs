use serde::{Deserialize, Serialize};

use super::ModelError;

/// How width enters initialisation, attention scaling and the readout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// Maximal-update parameterisation relative to `mup_base_width`.
    #[default]
    Mup,
    /// Plain fan-in initialisation, `1/sqrt(head_dim)` attention, no readout
    /// multiplier, one learning rate for every group. Kept as a control.
    Standard,
}

/// Architecture and width-scaling description of one model size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub context_len: usize,
    pub softmax_temperature: f64,
    pub mup_base_width: usize,
    pub init_std: f64,
    #[serde(default = "default_xpos_gamma")]
    pub xpos_gamma: f64,
    /// Positions are divided by this before exponentiating the xPos decay.
    #[serde(default = "default_xpos_scale_base")]
    pub xpos_scale_base: f64,
    #[serde(default = "default_layernorm_eps")]
    pub layernorm_eps: f64,
    #[serde(default)]
    pub parameterization: Parameterization,
}

fn default_xpos_gamma() -> f64 {
    0.4
}

fn default_xpos_scale_base() -> f64 {
    512.0
}

fn default_layernorm_eps() -> f64 {
    crate::numerics::DEFAULT_LAYERNORM_EPS
}

impl ModelConfig {
    /// Small byte-level model: `n_heads = hidden_dim / head_dim`, `ffn_dim = 4 * hidden_dim`.
    pub fn toy(hidden_dim: usize, n_layers: usize, head_dim: usize) -> Self {
        ModelConfig {
            vocab_size: crate::tokenizer::VOCAB_SIZE,
            hidden_dim,
            n_layers,
            n_heads: hidden_dim / head_dim,
            head_dim,
            ffn_dim: 4 * hidden_dim,
            context_len: 32,
            softmax_temperature: 1.0,
            mup_base_width: 64,
            init_std: 0.02,
            xpos_gamma: default_xpos_gamma(),
            xpos_scale_base: default_xpos_scale_base(),
            layernorm_eps: default_layernorm_eps(),
            parameterization: Parameterization::Mup,
        }
    }

    /// Same model at another width: heads scale with width, `head_dim` stays fixed.
    pub fn with_width(&self, hidden_dim: usize) -> Self {
        ModelConfig {
            hidden_dim,
            n_heads: hidden_dim / self.head_dim,
            ffn_dim: 4 * hidden_dim,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("context_len", self.context_len),
            ("mup_base_width", self.mup_base_width),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(ModelError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.hidden_dim != self.n_heads * self.head_dim {
            return Err(ModelError::InvalidConfig(format!(
                "hidden_dim {} != n_heads {} x head_dim {}",
                self.hidden_dim, self.n_heads, self.head_dim
            )));
        }
        if self.head_dim % 2 != 0 {
            return Err(ModelError::InvalidConfig(format!("head_dim {} must be even for xPos", self.head_dim)));
        }
        let positive = [
            ("softmax_temperature", self.softmax_temperature),
            ("init_std", self.init_std),
            ("xpos_scale_base", self.xpos_scale_base),
            ("layernorm_eps", self.layernorm_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.xpos_gamma >= 0.0 && self.xpos_gamma.is_finite()) {
            return Err(ModelError::InvalidConfig(format!("xpos_gamma must be nonnegative, got {}", self.xpos_gamma)));
        }
        Ok(())
    }

    /// `w0 / d` under µP, 1 otherwise.
    pub fn width_ratio(&self) -> f64 {
        match self.parameterization {
            Parameterization::Mup => self.mup_base_width as f64 / self.hidden_dim as f64,
            Parameterization::Standard => 1.0,
        }
    }

    pub fn attention_scale(&self) -> f64 {
        match self.parameterization {
            Parameterization::Mup => 1.0 / self.head_dim as f64,
            Parameterization::Standard => 1.0 / (self.head_dim as f64).sqrt(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        let d = self.hidden_dim;
        let per_layer = 4 * d * d + 2 * d * self.ffn_dim + 4 * d;
        2 * self.vocab_size * d + self.n_layers * per_layer + 2 * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        ModelConfig::toy(64, 2, 16).validate().unwrap();
    }

    #[test]
    fn rejects_inconsistent_heads_and_odd_head_dim() {
        let mut c = ModelConfig::toy(64, 2, 16);
        c.n_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(60, 2, 15);
        c.n_heads = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(64, 2, 16);
        c.softmax_temperature = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn toml_round_trip_rejects_unknown_keys() {
        let c = ModelConfig::toy(64, 2, 16);
        let text = toml::to_string(&c).unwrap();
        let back: ModelConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let bad = format!("{text}\nbogus = 1\n");
        assert!(toml::from_str::<ModelConfig>(&bad).is_err());
    }
}
