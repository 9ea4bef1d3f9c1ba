use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures::{bind, primitive_graphs, rand_tensor};
use super::*;

#[test]
fn square_has_value_nine_and_gradient_six() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    g.mul(x, x);
    let (v, grads) = g.evaluate_with_gradients(&bind(vec![("x", Tensor::scalar(3.0))])).unwrap();
    assert_eq!(v.data(), &[9.0]);
    assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
}

#[test]
fn sum_of_softmax_has_zero_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    let s = g.softmax(x, false);
    g.sum(s);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (v, grads) = g.evaluate_with_gradients(&bind(vec![("x", rand_tensor(&mut rng, &[1, 7]))])).unwrap();
    assert!((v.data()[0] - 1.0).abs() < 1e-12);
    assert!(grads.get("x").unwrap().data().iter().all(|d| d.abs() < 1e-12));
}

#[test]
fn non_scalar_output_rejects_gradients() {
    let mut g = Graph::<f64>::new();
    let x = g.param("x");
    g.scale(x, 2.0);
    let err = g.evaluate_with_gradients(&bind(vec![("x", Tensor::from_vec(vec![1.0, 2.0]))])).unwrap_err();
    assert!(matches!(err, NumericsError::NonScalarOutput(_)));
}

#[test]
fn shape_mismatch_names_the_node() {
    let mut g = Graph::<f64>::new();
    let a = g.input("a");
    let b = g.input("b");
    let m = g.matmul(a, b);
    let err = g
        .evaluate(&bind(vec![("a", Tensor::zeros(&[2, 3])), ("b", Tensor::zeros(&[4, 2]))]))
        .unwrap_err();
    match err {
        NumericsError::ShapeMismatch { node, op, .. } => {
            assert_eq!(node, m);
            assert_eq!(op, "matmul");
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn unbound_input_is_an_error() {
    let mut g = Graph::<f64>::new();
    g.input("missing");
    assert!(matches!(g.evaluate(&BTreeMap::new()), Err(NumericsError::Unbound(_))));
}

#[test]
fn finite_difference_examples() {
    let sq = |x: &Tensor<f64>| Ok(x.data()[0] * x.data()[0]);
    let g = finite_difference_gradient(sq, &Tensor::scalar(3.0), 1e-3).unwrap();
    assert!((g.data()[0] - 6.0).abs() < 1e-6);

    let constant = |_: &Tensor<f64>| Ok(4.2);
    let g = finite_difference_gradient(constant, &Tensor::from_vec(vec![1.0, -2.0, 3.0]), 1e-3).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));

    // Taylor remainder for exp at 0 is eps^2/6 ~ 1.7e-9.
    let e = |x: &Tensor<f64>| Ok(x.data()[0].exp());
    let g = finite_difference_gradient(e, &Tensor::scalar(0.0), 1e-4).unwrap();
    assert!((g.data()[0] - 1.0).abs() < 1e-8);

    let bad = |_: &Tensor<f64>| Ok(f64::NAN);
    assert!(finite_difference_gradient(bad, &Tensor::scalar(0.0), 1e-3).is_err());
    assert!(finite_difference_gradient(sq, &Tensor::scalar(0.0), 0.0).is_err());
}

/// Three tanh layers 2-3-2-1 plus biases: 6+3+6+2+2+1 = 20 parameters.
#[test]
fn mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::<f64>::new();
    let x = g.input("x");
    let w1 = g.param("w1");
    let b1 = g.param("b1");
    let w2 = g.param("w2");
    let b2 = g.param("b2");
    let w3 = g.param("w3");
    let b3 = g.param("b3");
    let h = g.matmul(x, w1);
    let h = g.add_row(h, b1);
    let h = g.unary(h, Nonlinearity::Tanh);
    let h = g.matmul(h, w2);
    let h = g.add_row(h, b2);
    let h = g.unary(h, Nonlinearity::Tanh);
    let h = g.matmul(h, w3);
    let h = g.add_row(h, b3);
    g.sum(h);
    let b = bind(vec![
        ("x", rand_tensor(&mut rng, &[4, 2])),
        ("w1", rand_tensor(&mut rng, &[2, 3])),
        ("b1", rand_tensor(&mut rng, &[3])),
        ("w2", rand_tensor(&mut rng, &[3, 2])),
        ("b2", rand_tensor(&mut rng, &[2])),
        ("w3", rand_tensor(&mut rng, &[2, 1])),
        ("b3", rand_tensor(&mut rng, &[1])),
    ]);
    let n_params: usize = b.iter().filter(|(k, _)| k.as_str() != "x").map(|(_, t)| t.len()).sum();
    assert_eq!(n_params, 20);
    let report = gradient_check(&g, &b, DEFAULT_FD_EPS).unwrap();
    assert!(report.worst_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn every_primitive_passes_gradient_check_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        for (name, g, b) in primitive_graphs(&mut rng) {
            let report = gradient_check(&g, &b, DEFAULT_FD_EPS).unwrap();
            assert!(report.worst_relative_error <= 1e-4, "{name}: {report:?}");
            worst = worst.max(report.worst_relative_error);
        }
    }
    assert!(worst <= 1e-4);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for causal in [false, true] {
        let x = rand_tensor(&mut rng, &[6, 6]).map(|v| v * 20.0);
        let mut g = Graph::new();
        let a = g.input("x");
        g.softmax(a, causal);
        let y = g.evaluate(&bind(vec![("x", x)])).unwrap();
        for r in 0..6 {
            let s: f64 = y.row(r).iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }
}

/// Direct weighted-statistics recomputation used as the oracle.
fn layernorm_oracle(x: &[f64], m: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
    let mut wsum = 0.0;
    let mut mean = 0.0;
    for i in 0..x.len() {
        wsum += m[i];
        mean += m[i] * x[i];
    }
    mean /= wsum;
    let mut var = 0.0;
    for i in 0..x.len() {
        var += m[i] * (x[i] - mean) * (x[i] - mean);
    }
    var /= wsum;
    let mut out = Vec::new();
    for i in 0..x.len() {
        out.push(m[i] * (g[i] * (x[i] - mean) / (var + eps).sqrt() + b[i]));
    }
    out
}

#[test]
fn masked_layernorm_with_full_mask_is_standard_layernorm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
    let ones = vec![1.0; 16];
    let zeros = vec![0.0; 16];
    let y = masked_layernorm(&x, &ones, &ones, &zeros, 1e-5).unwrap();
    let mean: f64 = y.iter().sum::<f64>() / 16.0;
    let var: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
    assert!(mean.abs() <= 1e-6);
    assert!((var - 1.0).abs() <= 1e-4);
    // plain (unweighted) layernorm
    let mu = x.iter().sum::<f64>() / 16.0;
    let s2 = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 16.0;
    for (yi, xi) in y.iter().zip(&x) {
        assert!((yi - (xi - mu) / (s2 + 1e-5).sqrt()).abs() < 1e-12);
    }
}

#[test]
fn masked_layernorm_ignores_zero_weighted_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let old: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
    let gain: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..1.5)).collect();
    let bias: Vec<f64> = (0..12).map(|_| rng.random_range(-0.5..0.5)).collect();
    let before = masked_layernorm(&old, &[1.0; 8], &gain[..8], &bias[..8], 1e-5).unwrap();
    let mut grown = old.clone();
    grown.extend((0..4).map(|_| rng.random_range(-9.0..9.0)));
    let mut mask = vec![1.0; 8];
    mask.extend([0.0; 4]);
    let after = masked_layernorm(&grown, &mask, &gain, &bias, 1e-5).unwrap();
    assert_eq!(&after[..8], &before[..]);
    assert!(after[8..].iter().all(|&v| v == 0.0));
}

#[test]
fn masked_layernorm_half_weights_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let n = 10;
        let x: Vec<f32> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f32> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
        let b: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        let m: Vec<f32> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.5 }).collect();
        let y = masked_layernorm(&x, &m, &g, &b, 1e-5).unwrap();
        let f = |v: &[f32]| v.iter().map(|&e| e as f64).collect::<Vec<_>>();
        let want = layernorm_oracle(&f(&x), &f(&m), &f(&g), &f(&b), 1e-5);
        for (a, w) in y.iter().zip(&want) {
            assert!((*a as f64 - w).abs() <= 1e-6, "{a} vs {w}");
        }
    }
}

#[test]
fn masked_layernorm_rejects_bad_arguments() {
    let x = [1.0f64, 2.0];
    assert!(masked_layernorm(&x, &[0.0, 0.0], &[1.0, 1.0], &[0.0, 0.0], 1e-5).is_err());
    assert!(masked_layernorm(&x, &[1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0], 0.0).is_err());
    assert!(masked_layernorm(&x, &[1.0], &[1.0, 1.0], &[0.0, 0.0], 1e-5).is_err());
}

#[test]
fn evaluation_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let graphs = primitive_graphs(&mut rng);
    for (name, g, b) in &graphs {
        let (v1, g1) = g.evaluate_with_gradients(b).unwrap();
        let (v2, g2) = g.evaluate_with_gradients(b).unwrap();
        assert_eq!(v1, v2, "{name}");
        for (k, t) in &g1.by_name {
            assert_eq!(t, g2.get(k).unwrap(), "{name}");
        }
    }
}
