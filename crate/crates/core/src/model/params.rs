use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, Parameterization};
use crate::numerics::{Bindings, Tensor};
use crate::scalar::Scalar;

/// Optimizer-relevant class of a parameter tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Hidden,
    Readout,
    /// Layer-norm gains and biases.
    Vector,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name == TOK_EMB {
            ParamGroup::Embedding
        } else if name == READOUT {
            ParamGroup::Readout
        } else if name.ends_with(".gain") || name.ends_with(".bias") {
            ParamGroup::Vector
        } else {
            ParamGroup::Hidden
        }
    }

    pub fn decays(self) -> bool {
        !matches!(self, ParamGroup::Vector)
    }

    pub const ALL: [ParamGroup; 4] = [ParamGroup::Embedding, ParamGroup::Hidden, ParamGroup::Readout, ParamGroup::Vector];

    pub fn as_str(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::Hidden => "hidden",
            ParamGroup::Readout => "readout",
            ParamGroup::Vector => "vector",
        }
    }
}

pub const TOK_EMB: &str = "tok_emb";
pub const READOUT: &str = "readout";
pub const FINAL_GAIN: &str = "ln_f.gain";
pub const FINAL_BIAS: &str = "ln_f.bias";

/// Names of the tensors belonging to one transformer block.
#[derive(Clone, Debug)]
pub struct LayerNames {
    pub ln1_gain: String,
    pub ln1_bias: String,
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub ln2_gain: String,
    pub ln2_bias: String,
    pub w1: String,
    pub w2: String,
}

impl LayerNames {
    pub fn new(layer: usize) -> Self {
        let p = |s: &str| format!("layers.{layer}.{s}");
        LayerNames {
            ln1_gain: p("ln1.gain"),
            ln1_bias: p("ln1.bias"),
            wq: p("attn.wq"),
            wk: p("attn.wk"),
            wv: p("attn.wv"),
            wo: p("attn.wo"),
            ln2_gain: p("ln2.gain"),
            ln2_bias: p("ln2.bias"),
            w1: p("ffn.w1"),
            w2: p("ffn.w2"),
        }
    }
}

/// Canonical `(name, shape)` enumeration for a config.
pub fn param_shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (v, d, f) = (config.vocab_size, config.hidden_dim, config.ffn_dim);
    let a = config.n_heads * config.head_dim;
    let mut out = vec![(TOK_EMB.to_string(), vec![v, d])];
    for l in 0..config.n_layers {
        let n = LayerNames::new(l);
        out.push((n.ln1_gain, vec![d]));
        out.push((n.ln1_bias, vec![d]));
        out.push((n.wq, vec![d, a]));
        out.push((n.wk, vec![d, a]));
        out.push((n.wv, vec![d, a]));
        out.push((n.wo, vec![a, d]));
        out.push((n.ln2_gain, vec![d]));
        out.push((n.ln2_bias, vec![d]));
        out.push((n.w1, vec![d, f]));
        out.push((n.w2, vec![f, d]));
    }
    out.push((FINAL_GAIN.to_string(), vec![d]));
    out.push((FINAL_BIAS.to_string(), vec![d]));
    out.push((READOUT.to_string(), vec![d, v]));
    out
}

/// Named tensors in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T> {
    tensors: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Parameters<T> {
    pub fn from_named(tensors: Vec<(String, Tensor<T>)>) -> Self {
        let index = tensors.iter().enumerate().map(|(i, (n, _))| (n.clone(), i)).collect();
        Parameters { tensors, index }
    }

    /// Zero tensors shaped like `self` (optimizer moments).
    pub fn zeros_like(&self) -> Self {
        Self::from_named(self.tensors.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect())
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        Self::from_named(param_shapes(config).into_iter().map(|(n, s)| (n, Tensor::zeros(&s))).collect())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.tensors[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.tensors[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn check_finite(&self) -> Result<(), ModelError> {
        for (n, t) in &self.tensors {
            t.check_finite().map_err(|_| ModelError::NonFinite(n.clone()))?;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Parameters<U> {
        Parameters::from_named(self.tensors.iter().map(|(n, t)| (n.clone(), t.cast())).collect())
    }

    /// Shapes agree with the canonical enumeration for `config`.
    pub fn matches(&self, config: &ModelConfig) -> bool {
        let want = param_shapes(config);
        want.len() == self.tensors.len()
            && want.iter().zip(&self.tensors).all(|((wn, ws), (n, t))| wn == n && ws.as_slice() == t.shape())
    }
}

impl<T: Scalar> Bindings<T> for Parameters<T> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

/// Initial standard deviation of every tensor under the configured
/// parameterisation; `None` for layer-norm tensors (gain 1, bias 0).
pub fn init_std(config: &ModelConfig, name: &str, shape: &[usize]) -> Option<f64> {
    let sigma = config.init_std;
    let w0 = config.mup_base_width as f64;
    let d = config.hidden_dim as f64;
    match ParamGroup::of(name) {
        ParamGroup::Vector => None,
        ParamGroup::Embedding => Some(sigma),
        ParamGroup::Hidden => Some(sigma * (w0 / shape[0] as f64).sqrt()),
        ParamGroup::Readout => Some(match config.parameterization {
            // Paired with the w0/d readout multiplier this keeps initial
            // logits identical in scale to the base-width model.
            Parameterization::Mup => sigma * (d / w0).sqrt(),
            Parameterization::Standard => sigma * (w0 / d).sqrt(),
        }),
    }
}

/// Gaussian initialisation, deterministic under `seed`.
pub fn init_parameters<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Parameters<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::new();
    for (name, shape) in param_shapes(config) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = match init_std(config, &name, &shape) {
            None if name.ends_with(".gain") => vec![T::one(); n],
            None => vec![T::zero(); n],
            Some(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| ModelError::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| T::from_f64_lossy(dist.sample(&mut rng))).collect()
            }
        };
        tensors.push((name, Tensor::new(shape, data).expect("canonical shape")));
    }
    Ok(Parameters::from_named(tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empirical_std(t: &Tensor<f64>) -> f64 {
        let n = t.len() as f64;
        let mean = t.sum() / n;
        (t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn hidden_std_at_base_width_is_sigma() {
        let mut c = ModelConfig::toy(256, 1, 64);
        c.mup_base_width = 256;
        c.init_std = 1.6e-2;
        assert_eq!(init_std(&c, "layers.0.attn.wq", &[256, 256]), Some(1.6e-2));
        let p: Parameters<f64> = init_parameters(&c, 3).unwrap();
        let s = empirical_std(p.get("layers.0.attn.wq").unwrap());
        assert!((s - 1.6e-2).abs() < 1.6e-2 * 0.02, "{s}");
    }

    #[test]
    fn hidden_std_halves_at_four_times_base_width() {
        let mut c = ModelConfig::toy(256, 1, 64);
        c.mup_base_width = 64;
        let sigma = c.init_std;
        let got = init_std(&c, "layers.0.ffn.w1", &[256, 1024]).unwrap();
        assert!((got - sigma / 2.0).abs() < 1e-15);
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let c = ModelConfig::toy(32, 2, 8);
        let a: Parameters<f32> = init_parameters(&c, 11).unwrap();
        let b: Parameters<f32> = init_parameters(&c, 11).unwrap();
        let other: Parameters<f32> = init_parameters(&c, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, other);
        assert!(a.matches(&c));
    }

    #[test]
    fn layernorm_tensors_start_at_identity() {
        let c = ModelConfig::toy(32, 1, 8);
        let p: Parameters<f32> = init_parameters(&c, 0).unwrap();
        assert!(p.get("layers.0.ln1.gain").unwrap().data().iter().all(|&v| v == 1.0));
        assert!(p.get(FINAL_BIAS).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn groups_are_assigned_by_name() {
        assert_eq!(ParamGroup::of(TOK_EMB), ParamGroup::Embedding);
        assert_eq!(ParamGroup::of(READOUT), ParamGroup::Readout);
        assert_eq!(ParamGroup::of("layers.3.ln2.bias"), ParamGroup::Vector);
        assert_eq!(ParamGroup::of("layers.3.attn.wo"), ParamGroup::Hidden);
        assert!(!ParamGroup::Vector.decays());
    }
}
