use std::sync::Arc;

use super::params::{LayerNames, FINAL_BIAS, FINAL_GAIN, READOUT, TOK_EMB};
use super::xpos::{rotation_table, Side, XposDecay};
use super::{ModelConfig, ModelError, Parameters};
use crate::growth::{GrowthMaskState, MaskVectors};
use crate::numerics::{Axis, Graph, NodeId, Nonlinearity, Tensor};
use crate::scalar::Scalar;

/// Computation graph for one batch of equal-length sequences.
pub struct BatchGraph<T> {
    pub graph: Graph<T>,
    pub logits: NodeId,
    /// Residual stream after each block.
    pub block_outputs: Vec<NodeId>,
    pub loss: Option<NodeId>,
    pub rows: usize,
}

/// Next-token training targets for a batch.
pub struct LossTargets<'a> {
    pub targets: &'a [u32],
    pub weights: &'a [f32],
}

fn const_row<T: Scalar>(g: &mut Graph<T>, v: &[f64]) -> NodeId {
    g.constant(Tensor::from_vec(v.iter().map(|&x| T::from_f64_lossy(x)).collect()))
}

fn check_batch(config: &ModelConfig, seqs: &[&[u32]]) -> Result<usize, ModelError> {
    let first = seqs.first().ok_or(ModelError::EmptyBatch)?;
    let len = first.len();
    if len == 0 {
        return Err(ModelError::EmptyBatch);
    }
    if len > config.context_len {
        return Err(ModelError::SequenceTooLong { len, max: config.context_len });
    }
    for s in seqs {
        if s.len() != len {
            return Err(ModelError::RaggedBatch);
        }
        if let Some(&bad) = s.iter().find(|&&t| t as usize >= config.vocab_size) {
            return Err(ModelError::UnknownToken { id: bad, vocab: config.vocab_size });
        }
    }
    Ok(len)
}

/// Builds the decoder graph. Parameters are bound by canonical name at
/// evaluation time, so one graph serves any parameter set of this shape.
pub fn build_graph<T: Scalar>(
    config: &ModelConfig,
    masks: Option<&GrowthMaskState>,
    seqs: &[&[u32]],
    loss: Option<LossTargets<'_>>,
) -> Result<BatchGraph<T>, ModelError> {
    config.validate()?;
    let t_len = check_batch(config, seqs)?;
    let batch = seqs.len();
    let rows = batch * t_len;
    let (hd, heads) = (config.head_dim, config.n_heads);
    let mv = match masks {
        Some(m) if !m.all_open() => m.vectors(config),
        _ => MaskVectors {
            hidden: None,
            ffn: None,
            heads: None,
            layer_gates: vec![1.0; config.n_layers],
            effective_width: config.hidden_dim as f64,
        },
    };
    let eps = T::from_f64_lossy(config.layernorm_eps);
    let ln_mask: Arc<Vec<T>> = Arc::new(match &mv.hidden {
        Some(h) => h.iter().map(|&v| T::from_f64_lossy(v)).collect(),
        None => vec![T::one(); config.hidden_dim],
    });

    let mut g = Graph::new();
    let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&t| t as usize)).collect();
    let emb = g.param(TOK_EMB);
    let mut x = g.embedding(emb, ids);
    if let Some(h) = &mv.hidden {
        let hm = const_row(&mut g, h);
        x = g.mul_row(x, hm);
    }

    let positions: Vec<usize> = (0..t_len).collect();
    let decay = Some(XposDecay { gamma: config.xpos_gamma, scale_base: config.xpos_scale_base });
    let tq = Arc::new(rotation_table::<T>(&positions, hd, decay, Side::Query)?);
    let tk = Arc::new(rotation_table::<T>(&positions, hd, decay, Side::Key)?);
    let attn_scale = T::from_f64_lossy(config.attention_scale());
    let head_mask = mv.heads.as_ref().map(|h| const_row(&mut g, h));
    let ffn_mask = mv.ffn.as_ref().map(|f| const_row(&mut g, f));

    let mut block_outputs = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let n = LayerNames::new(layer);
        // Residual contribution gate: hidden mask times the layer gate.
        let gate = mv.layer_gates[layer];
        let residual_gate: Option<Vec<f64>> = match (&mv.hidden, gate < 1.0) {
            (None, false) => None,
            (None, true) => Some(vec![gate; config.hidden_dim]),
            (Some(h), _) => Some(h.iter().map(|&v| v * gate).collect()),
        };
        let residual_gate = residual_gate.map(|v| const_row(&mut g, &v));

        let (g1, b1) = (g.param(&n.ln1_gain), g.param(&n.ln1_bias));
        let h = g.layernorm(x, g1, b1, ln_mask.clone(), eps);
        let (wq, wk, wv) = (g.param(&n.wq), g.param(&n.wk), g.param(&n.wv));
        let q = g.matmul(h, wq);
        let k = g.matmul(h, wk);
        let v = g.matmul(h, wv);
        let mut per_seq = Vec::with_capacity(batch);
        for b in 0..batch {
            let rr = b * t_len..(b + 1) * t_len;
            let mut per_head = Vec::with_capacity(heads);
            for head in 0..heads {
                let cc = head * hd..(head + 1) * hd;
                let qs = g.slice(q, rr.clone(), cc.clone());
                let qs = g.rotate_pairs(qs, tq.clone());
                let ks = g.slice(k, rr.clone(), cc.clone());
                let ks = g.rotate_pairs(ks, tk.clone());
                let vs = g.slice(v, rr.clone(), cc);
                let kt = g.transpose(ks);
                let s = g.matmul(qs, kt);
                let s = g.scale(s, attn_scale);
                let p = g.softmax(s, true);
                per_head.push(g.matmul(p, vs));
            }
            per_seq.push(if heads == 1 { per_head[0] } else { g.concat(per_head, Axis::Cols) });
        }
        let mut att = if batch == 1 { per_seq[0] } else { g.concat(per_seq, Axis::Rows) };
        if let Some(hm) = head_mask {
            att = g.mul_row(att, hm);
        }
        let wo = g.param(&n.wo);
        let mut a = g.matmul(att, wo);
        if let Some(rg) = residual_gate {
            a = g.mul_row(a, rg);
        }
        x = g.add(x, a);

        let (g2, b2) = (g.param(&n.ln2_gain), g.param(&n.ln2_bias));
        let h2 = g.layernorm(x, g2, b2, ln_mask.clone(), eps);
        let w1 = g.param(&n.w1);
        let f = g.matmul(h2, w1);
        let mut f = g.unary(f, Nonlinearity::Gelu);
        if let Some(fm) = ffn_mask {
            f = g.mul_row(f, fm);
        }
        let w2 = g.param(&n.w2);
        let mut f = g.matmul(f, w2);
        if let Some(rg) = residual_gate {
            f = g.mul_row(f, rg);
        }
        x = g.add(x, f);
        block_outputs.push(x);
    }

    let (gf, bf) = (g.param(FINAL_GAIN), g.param(FINAL_BIAS));
    let hf = g.layernorm(x, gf, bf, ln_mask, eps);
    let readout = g.param(READOUT);
    let raw = g.matmul(hf, readout);
    let multiplier = match config.parameterization {
        super::Parameterization::Mup => config.mup_base_width as f64 / mv.effective_width,
        super::Parameterization::Standard => 1.0,
    } / config.softmax_temperature;
    let logits = g.scale(raw, T::from_f64_lossy(multiplier));

    let loss = match loss {
        None => None,
        Some(lt) => {
            if lt.targets.len() != rows || lt.weights.len() != rows {
                return Err(ModelError::LossShape { rows, targets: lt.targets.len(), weights: lt.weights.len() });
            }
            if lt.weights.iter().all(|&w| w == 0.0) {
                return Err(ModelError::EmptyLossMask);
            }
            if let Some(&bad) = lt.targets.iter().find(|&&t| t as usize >= config.vocab_size) {
                return Err(ModelError::UnknownToken { id: bad, vocab: config.vocab_size });
            }
            let targets = lt.targets.iter().map(|&t| t as usize).collect();
            let weights = lt.weights.iter().map(|&w| T::from_f64_lossy(w as f64)).collect();
            Some(g.cross_entropy(logits, targets, weights))
        }
    };
    if let Some(l) = loss {
        g.set_output(l);
    } else {
        g.set_output(logits);
    }
    Ok(BatchGraph { graph: g, logits, block_outputs, loss, rows })
}

/// Logits (`len x vocab`) for one token sequence.
pub fn forward<T: Scalar>(
    params: &Parameters<T>,
    config: &ModelConfig,
    tokens: &[u32],
    masks: Option<&GrowthMaskState>,
) -> Result<Tensor<T>, ModelError> {
    forward_batch(params, config, &[tokens], masks)
}

/// Logits for a batch of equal-length sequences, rows in sequence-major order.
pub fn forward_batch<T: Scalar>(
    params: &Parameters<T>,
    config: &ModelConfig,
    seqs: &[&[u32]],
    masks: Option<&GrowthMaskState>,
) -> Result<Tensor<T>, ModelError> {
    if !params.matches(config) {
        return Err(ModelError::ParameterShape);
    }
    let bg = build_graph::<T>(config, masks, seqs, None)?;
    Ok(bg.graph.evaluate(params)?)
}
