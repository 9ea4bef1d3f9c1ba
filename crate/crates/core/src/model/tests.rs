use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{gradient_check, kernels, Tensor};

fn tiny(d: usize, l: usize, v: usize, hd: usize) -> ModelConfig {
    let mut c = ModelConfig::toy(d, l, hd);
    c.vocab_size = v;
    c.context_len = 16;
    c.mup_base_width = 16;
    c.init_std = 0.5;
    c
}

fn random_tokens(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..vocab as u32)).collect()
}

#[test]
fn doubling_temperature_halves_logits() {
    let mut c = tiny(32, 2, 64, 8);
    let p: Parameters<f32> = init_parameters(&c, 1).unwrap();
    let toks = random_tokens(&mut ChaCha8Rng::seed_from_u64(2), 10, 64);
    let a = forward(&p, &c, &toks, None).unwrap();
    c.softmax_temperature *= 2.0;
    let b = forward(&p, &c, &toks, None).unwrap();
    for r in 0..10 {
        let (ra, rb) = (a.row(r), b.row(r));
        for (x, y) in ra.iter().zip(rb) {
            assert!((x / 2.0 - y).abs() <= 1e-7 * x.abs().max(1.0));
        }
        let argmax = |row: &[f32]| row.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
        assert_eq!(argmax(ra), argmax(rb));
    }
}

#[test]
fn base_width_recovers_unit_output_multiplier() {
    let mut c = tiny(32, 1, 64, 8);
    c.mup_base_width = 32;
    assert_eq!(c.width_ratio(), 1.0);
}

/// Straight-line reference decoder in f64 with scalar loops.
fn oracle_forward(p: &Parameters<f32>, c: &ModelConfig, toks: &[u32]) -> Vec<Vec<f64>> {
    let get = |n: &str| -> Vec<f64> { p.get(n).unwrap().data().iter().map(|&v| v as f64).collect() };
    let (d, t, hd, heads, f, v) = (c.hidden_dim, toks.len(), c.head_dim, c.n_heads, c.ffn_dim, c.vocab_size);
    let matvec = |x: &[f64], w: &[f64], cols: usize| -> Vec<f64> {
        let mut out = vec![0.0; cols];
        for (i, xi) in x.iter().enumerate() {
            for j in 0..cols {
                out[j] += xi * w[i * cols + j];
            }
        }
        out
    };
    let ln = |x: &[f64], g: &[f64], b: &[f64]| -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        x.iter().enumerate().map(|(i, a)| g[i] * (a - mean) / (var + c.layernorm_eps).sqrt() + b[i]).collect()
    };
    let emb = get(TOK_EMB);
    let mut xs: Vec<Vec<f64>> = toks.iter().map(|&k| emb[k as usize * d..(k as usize + 1) * d].to_vec()).collect();
    let rot = |x: &[f64], m: usize, key: bool| -> Vec<f64> {
        let mut out = vec![0.0; hd];
        for i in 0..hd / 2 {
            let th = 10000f64.powf(-2.0 * i as f64 / hd as f64) * m as f64;
            let z = (2.0 * i as f64 / hd as f64 + c.xpos_gamma) / (1.0 + c.xpos_gamma);
            let e = m as f64 / c.xpos_scale_base;
            let s = if key { z.powf(-e) } else { z.powf(e) };
            out[2 * i] = s * (x[2 * i] * th.cos() - x[2 * i + 1] * th.sin());
            out[2 * i + 1] = s * (x[2 * i] * th.sin() + x[2 * i + 1] * th.cos());
        }
        out
    };
    for l in 0..c.n_layers {
        let n = LayerNames::new(l);
        let h: Vec<Vec<f64>> = xs.iter().map(|x| ln(x, &get(&n.ln1_gain), &get(&n.ln1_bias))).collect();
        let q: Vec<Vec<f64>> = h.iter().map(|x| matvec(x, &get(&n.wq), d)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|x| matvec(x, &get(&n.wk), d)).collect();
        let vv: Vec<Vec<f64>> = h.iter().map(|x| matvec(x, &get(&n.wv), d)).collect();
        let mut att = vec![vec![0.0; d]; t];
        for head in 0..heads {
            let sl = |x: &Vec<f64>| x[head * hd..(head + 1) * hd].to_vec();
            for i in 0..t {
                let qi = rot(&sl(&q[i]), i, false);
                let mut scores = Vec::new();
                for j in 0..=i {
                    let kj = rot(&sl(&k[j]), j, true);
                    scores.push(qi.iter().zip(&kj).map(|(a, b)| a * b).sum::<f64>() / hd as f64);
                }
                let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = scores.iter().map(|s| (s - mx).exp()).sum();
                for j in 0..=i {
                    let pj = (scores[j] - mx).exp() / z;
                    for e in 0..hd {
                        att[i][head * hd + e] += pj * vv[j][head * hd + e];
                    }
                }
            }
        }
        for i in 0..t {
            let o = matvec(&att[i], &get(&n.wo), d);
            for e in 0..d {
                xs[i][e] += o[e];
            }
            let h2 = ln(&xs[i], &get(&n.ln2_gain), &get(&n.ln2_bias));
            let mid: Vec<f64> = matvec(&h2, &get(&n.w1), f).into_iter().map(kernels::gelu).collect();
            let o2 = matvec(&mid, &get(&n.w2), d);
            for e in 0..d {
                xs[i][e] += o2[e];
            }
        }
    }
    let mult = c.mup_base_width as f64 / d as f64 / c.softmax_temperature;
    xs.iter()
        .map(|x| {
            let h = ln(x, &get(FINAL_GAIN), &get(FINAL_BIAS));
            matvec(&h, &get(READOUT), v).into_iter().map(|z| z * mult).collect()
        })
        .collect()
}

#[test]
fn forward_matches_scalar_loop_oracle() {
    let mut c = tiny(32, 2, 64, 8);
    c.init_std = 0.1;
    let p: Parameters<f32> = init_parameters(&c, 5).unwrap();
    let toks = random_tokens(&mut ChaCha8Rng::seed_from_u64(6), 12, 64);
    let got = forward(&p, &c, &toks, None).unwrap();
    let want = oracle_forward(&p, &c, &toks);
    let mut worst = 0.0f64;
    for (r, row) in want.iter().enumerate() {
        for (a, b) in got.row(r).iter().zip(row) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    assert!(worst <= 1e-5, "max deviation {worst}");
}

#[test]
fn perturbing_a_token_never_changes_earlier_logits() {
    let c = tiny(32, 2, 64, 8);
    let p: Parameters<f32> = init_parameters(&c, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let toks = random_tokens(&mut rng, 12, 64);
        let t = rng.random_range(0..12);
        let mut changed = toks.clone();
        changed[t] = (changed[t] + 1) % 64;
        let a = forward(&p, &c, &toks, None).unwrap();
        let b = forward(&p, &c, &changed, None).unwrap();
        for r in 0..t {
            assert_eq!(a.row(r), b.row(r));
        }
    }
}

#[test]
fn forward_is_deterministic() {
    let c = tiny(32, 2, 64, 8);
    let p: Parameters<f32> = init_parameters(&c, 9).unwrap();
    let toks = random_tokens(&mut ChaCha8Rng::seed_from_u64(10), 8, 64);
    let a = forward(&p, &c, &toks, None).unwrap();
    let b = forward(&p, &c, &toks, None).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rejects_long_sequences_and_unknown_tokens() {
    let c = tiny(32, 1, 64, 8);
    let p: Parameters<f32> = init_parameters(&c, 0).unwrap();
    assert!(matches!(forward(&p, &c, &[0; 17], None), Err(ModelError::SequenceTooLong { .. })));
    assert!(matches!(forward(&p, &c, &[64], None), Err(ModelError::UnknownToken { .. })));
}

#[test]
fn initial_logit_scale_is_stable_across_widths() {
    let base = {
        let mut c = ModelConfig::toy(64, 2, 16);
        c.mup_base_width = 64;
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seqs: Vec<Vec<u32>> = (0..4).map(|_| random_tokens(&mut rng, 32, 256)).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
    let rms: Vec<f64> = [64, 128, 256]
        .iter()
        .map(|&w| {
            let c = base.with_width(w);
            let p: Parameters<f32> = init_parameters(&c, 12).unwrap();
            forward_batch(&p, &c, &refs, None).unwrap().rms()
        })
        .collect();
    let (lo, hi) = (rms.iter().cloned().fold(f64::MAX, f64::min), rms.iter().cloned().fold(0.0, f64::max));
    assert!(hi / lo <= 2.0, "logit rms {rms:?}");
}

#[test]
fn tiny_transformer_gradients_match_finite_differences() {
    let mut c = tiny(8, 2, 11, 4);
    c.context_len = 5;
    let p: Parameters<f64> = init_parameters(&c, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let seqs: Vec<Vec<u32>> = (0..2).map(|_| random_tokens(&mut rng, 5, 11)).collect();
    let refs: Vec<&[u32]> = seqs.iter().map(|s| s.as_slice()).collect();
    let targets = random_tokens(&mut rng, 10, 11);
    let weights = [1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0];
    let bg = build_graph::<f64>(&c, None, &refs, Some(LossTargets { targets: &targets, weights: &weights })).unwrap();
    let bindings: BTreeMap<String, Tensor<f64>> = p.iter().map(|(n, t)| (n.to_string(), t.clone())).collect();
    let report = gradient_check(&bg.graph, &bindings, 1e-3).unwrap();
    assert!(report.worst_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn masked_out_positions_receive_exactly_zero_gradient() {
    let mut g = crate::numerics::Graph::<f32>::new();
    let z = g.param("logits");
    g.cross_entropy(z, vec![1, 2, 3], vec![1.0, 0.0, 1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let logits = Tensor::new(vec![3, 5], (0..15).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let b: BTreeMap<String, Tensor<f32>> = [("logits".to_string(), logits)].into();
    let (_, grads) = g.evaluate_with_gradients(&b).unwrap();
    let d = grads.get("logits").unwrap();
    assert!(d.row(1).iter().all(|&v| v == 0.0));
    assert!(d.row(0).iter().any(|&v| v != 0.0));
}
