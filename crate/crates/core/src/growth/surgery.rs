use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AxisKind, GrowthError, MaskEntry};
use crate::model::{forward_batch, init_parameters, param_shapes, ModelConfig, Parameters};
use crate::numerics::Tensor;
use crate::trainer::{Checkpoint, Moments};

/// How inserted blocks are made to start as identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DepthMode {
    /// Residual contribution gated by a layer mask starting at 0.
    #[default]
    Masked,
    /// No mask; attention and FFN output projections start at zero.
    ZeroOutput,
}

/// Copies `old` into the leading block of `fresh`.
fn embed(old: &Tensor<f32>, mut fresh: Tensor<f32>) -> Tensor<f32> {
    match (old.shape(), fresh.shape().to_vec().as_slice()) {
        ([n], [_]) => fresh.data_mut()[..*n].copy_from_slice(old.data()),
        ([r0, c0], [_, c1]) => {
            let (r0, c0, c1) = (*r0, *c0, *c1);
            let dst = fresh.data_mut();
            for r in 0..r0 {
                dst[r * c1..r * c1 + c0].copy_from_slice(&old.data()[r * c0..(r + 1) * c0]);
            }
        }
        _ => unreachable!("parameters are vectors or matrices"),
    }
    fresh
}

fn check_axis(axis: &'static str, from: usize, to: usize) -> Result<(), GrowthError> {
    if to < from {
        return Err(GrowthError::Shrink { axis, from, to });
    }
    Ok(())
}

fn same_except_width(a: &ModelConfig, b: &ModelConfig) -> Result<(), GrowthError> {
    if a.head_dim != b.head_dim {
        return Err(GrowthError::HeadDimChange { from: a.head_dim, to: b.head_dim });
    }
    let mut t = b.clone();
    t.hidden_dim = a.hidden_dim;
    t.n_heads = a.n_heads;
    t.ffn_dim = a.ffn_dim;
    if t.n_layers != a.n_layers {
        return Err(GrowthError::Incompatible(format!("width growth keeps depth; got {} -> {} layers", a.n_layers, b.n_layers)));
    }
    if t != *a {
        return Err(GrowthError::Incompatible("target differs in a non-growable field".into()));
    }
    Ok(())
}

/// Enlarges hidden, FFN and head axes. Old entries keep their indices; new
/// entries come from a fresh initialisation at the target width and are
/// gated by masks starting at 0.
pub fn grow_width(ckpt: &Checkpoint, target: &ModelConfig, anneal_tokens: u64) -> Result<Checkpoint, GrowthError> {
    target.validate()?;
    let cur = &ckpt.config;
    same_except_width(cur, target)?;
    check_axis("hidden_dim", cur.hidden_dim, target.hidden_dim)?;
    check_axis("ffn_dim", cur.ffn_dim, target.ffn_dim)?;
    check_axis("n_heads", cur.n_heads, target.n_heads)?;

    let fresh = init_parameters::<f32>(target, ckpt.derived_seed(0x7769_6474))?;
    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, f) in fresh.iter() {
        let old = ckpt.params.get(name).ok_or_else(|| GrowthError::Incompatible(format!("missing `{name}`")))?;
        params.push((name.to_string(), embed(old, f.clone())));
        let zeros = Tensor::zeros(f.shape());
        m.push((name.to_string(), embed(ckpt.moments.m.get(name).expect("moments match"), zeros.clone())));
        v.push((name.to_string(), embed(ckpt.moments.v.get(name).expect("moments match"), zeros)));
    }
    let mut masks = ckpt.masks.clone();
    let axes = [
        (AxisKind::HiddenDim, cur.hidden_dim, target.hidden_dim),
        (AxisKind::FfnDim, cur.ffn_dim, target.ffn_dim),
        (AxisKind::NHeads, cur.n_heads, target.n_heads),
    ];
    for (axis, from, to) in axes {
        if to > from {
            masks.entries.push(MaskEntry::new(axis, from, to, anneal_tokens));
        }
    }
    if axes.iter().all(|(_, f, t)| f == t) {
        masks.entries.push(MaskEntry::new(AxisKind::HiddenDim, cur.hidden_dim, cur.hidden_dim, anneal_tokens));
    }
    Ok(Checkpoint {
        config: target.clone(),
        params: Parameters::from_named(params),
        moments: Moments { m: Parameters::from_named(m), v: Parameters::from_named(v) },
        masks,
        ..ckpt.clone()
    })
}

fn split_layer(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("layers.")?;
    let (idx, tail) = rest.split_once('.')?;
    Some((idx.parse().ok()?, tail))
}

/// Inserts one new block after each listed layer index (repeats allowed).
pub fn grow_depth(ckpt: &Checkpoint, insert_after: &[usize], anneal_tokens: u64) -> Result<Checkpoint, GrowthError> {
    grow_depth_with(ckpt, insert_after, DepthMode::Masked, anneal_tokens)
}

pub fn grow_depth_with(
    ckpt: &Checkpoint,
    insert_after: &[usize],
    mode: DepthMode,
    anneal_tokens: u64,
) -> Result<Checkpoint, GrowthError> {
    let l = ckpt.config.n_layers;
    if let Some(&bad) = insert_after.iter().find(|&&i| i >= l) {
        return Err(GrowthError::LayerIndex { index: bad, layers: l });
    }
    // New layout: each old layer followed by its inserted blocks.
    let mut old_at: Vec<Option<usize>> = Vec::new();
    let mut new_index_of_old = vec![0; l];
    for j in 0..l {
        new_index_of_old[j] = old_at.len();
        old_at.push(Some(j));
        for _ in insert_after.iter().filter(|&&i| i == j) {
            old_at.push(None);
        }
    }
    let mut target = ckpt.config.clone();
    target.n_layers = old_at.len();
    let fresh = init_parameters::<f32>(&target, ckpt.derived_seed(0x6465_7074))?;

    let mut params = Vec::new();
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (name, shape) in param_shapes(&target) {
        let source = match split_layer(&name) {
            None => Some(name.clone()),
            Some((i, tail)) => old_at[i].map(|j| format!("layers.{j}.{tail}")),
        };
        let (p, mm, vv) = match source {
            Some(src) => (
                ckpt.params.get(&src).expect("canonical names").clone(),
                ckpt.moments.m.get(&src).expect("canonical names").clone(),
                ckpt.moments.v.get(&src).expect("canonical names").clone(),
            ),
            None => {
                let mut p = fresh.get(&name).expect("canonical names").clone();
                if mode == DepthMode::ZeroOutput && (name.ends_with("attn.wo") || name.ends_with("ffn.w2")) {
                    p = Tensor::zeros(&shape);
                }
                (p, Tensor::zeros(&shape), Tensor::zeros(&shape))
            }
        };
        params.push((name.clone(), p));
        m.push((name.clone(), mm));
        v.push((name, vv));
    }

    let mut masks = ckpt.masks.clone();
    for e in &mut masks.entries {
        if e.axis == AxisKind::Layer {
            for li in &mut e.layers {
                *li = new_index_of_old[*li];
            }
        }
    }
    let inserted: Vec<usize> = old_at.iter().enumerate().filter(|(_, o)| o.is_none()).map(|(i, _)| i).collect();
    if mode == DepthMode::Masked && !inserted.is_empty() {
        masks.entries.push(MaskEntry { layers: inserted, ..MaskEntry::new(AxisKind::Layer, l, target.n_layers, anneal_tokens) });
    }
    Ok(Checkpoint {
        config: target,
        params: Parameters::from_named(params),
        moments: Moments { m: Parameters::from_named(m), v: Parameters::from_named(v) },
        masks,
        ..ckpt.clone()
    })
}

/// Insertion points spreading `extra` new blocks across `layers` old ones.
pub fn spread_insertions(layers: usize, extra: usize) -> Vec<usize> {
    (0..extra).map(|j| j * layers / extra).collect()
}

/// Depth growth followed by width growth into `target`, with every fully
/// open mask pruned first. Returns an unchanged copy when `target` equals
/// the current config.
pub fn grow_checkpoint(ckpt: &Checkpoint, target: &ModelConfig, anneal_tokens: u64) -> Result<Checkpoint, GrowthError> {
    if *target == ckpt.config {
        return Ok(ckpt.clone());
    }
    target.validate()?;
    let cur = &ckpt.config;
    check_axis("n_layers", cur.n_layers, target.n_layers)?;
    let mut c = ckpt.clone();
    c.masks.prune_open();
    if target.n_layers > cur.n_layers {
        c = grow_depth(&c, &spread_insertions(cur.n_layers, target.n_layers - cur.n_layers), anneal_tokens)?;
    }
    let widened = target.hidden_dim != cur.hidden_dim || target.ffn_dim != cur.ffn_dim || target.n_heads != cur.n_heads;
    if widened || c.config != *target {
        c = grow_width(&c, target, anneal_tokens)?;
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub n_probes: usize,
    pub max_abs_diff: f64,
    pub tol: f64,
    pub pass: bool,
}

/// Compares logits of both checkpoints (each under its own masks) on
/// `n_probes` random sequences.
pub fn verify_function_preservation(
    before: &Checkpoint,
    after: &Checkpoint,
    n_probes: usize,
    tol: f64,
    seed: u64,
) -> Result<PreservationReport, GrowthError> {
    let (a, b) = (&before.config, &after.config);
    if a.vocab_size != b.vocab_size {
        return Err(GrowthError::VocabMismatch { before: a.vocab_size, after: b.vocab_size });
    }
    let len = a.context_len.min(b.context_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<u32>> =
        (0..n_probes).map(|_| (0..len).map(|_| rng.random_range(0..a.vocab_size as u32)).collect()).collect();
    let mut max_abs_diff = 0.0f64;
    for chunk in probes.chunks(8) {
        let refs: Vec<&[u32]> = chunk.iter().map(|p| p.as_slice()).collect();
        let la = forward_batch(&before.params, a, &refs, Some(&before.masks))?;
        let lb = forward_batch(&after.params, b, &refs, Some(&after.masks))?;
        let d = la.max_abs_diff(&lb);
        max_abs_diff = if d.is_nan() { f64::INFINITY } else { max_abs_diff.max(d) };
    }
    Ok(PreservationReport { n_probes, max_abs_diff, tol, pass: max_abs_diff <= tol })
}
