use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Axis, Graph, NodeId, Nonlinearity, PairRotation, Tensor};

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn bind(pairs: Vec<(&str, Tensor<f64>)>) -> BTreeMap<String, Tensor<f64>> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// One graph per primitive, each reduced to a scalar by a fixed random
/// projection so that every output coordinate matters.
pub fn primitive_graphs(rng: &mut ChaCha8Rng) -> Vec<(&'static str, Graph<f64>, BTreeMap<String, Tensor<f64>>)> {
    let (r, c) = (rng.random_range(2..5), rng.random_range(2..5));
    let mut out = Vec::new();
    let mut finish = |name: &'static str, mut g: Graph<f64>, y: NodeId, shape: &[usize], b: BTreeMap<String, Tensor<f64>>, rng: &mut ChaCha8Rng| {
        let p = g.constant(rand_tensor(rng, shape));
        let m = g.mul(y, p);
        g.sum(m);
        out.push((name, g, b));
    };

    {
        let mut g = Graph::new();
        let a = g.param("a");
        let w = g.param("w");
        let y = g.matmul(a, w);
        let b = bind(vec![("a", rand_tensor(rng, &[r, c])), ("w", rand_tensor(rng, &[c, 3]))]);
        finish("matmul", g, y, &[r, 3], b, rng);
    }
    {
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.transpose(a);
        finish("transpose", g, y, &[c, r], bind(vec![("a", rand_tensor(rng, &[r, c]))]), rng);
    }
    for name in ["add", "mul"] {
        let mut g = Graph::new();
        let a = g.param("a");
        let b2 = g.param("b");
        let y = if name == "add" { g.add(a, b2) } else { g.mul(a, b2) };
        let b = bind(vec![("a", rand_tensor(rng, &[r, c])), ("b", rand_tensor(rng, &[r, c]))]);
        finish(name, g, y, &[r, c], b, rng);
    }
    for name in ["mul_row", "add_row"] {
        let mut g = Graph::new();
        let a = g.param("a");
        let v = g.param("v");
        let y = if name == "mul_row" { g.mul_row(a, v) } else { g.add_row(a, v) };
        let b = bind(vec![("a", rand_tensor(rng, &[r, c])), ("v", rand_tensor(rng, &[c]))]);
        finish(name, g, y, &[r, c], b, rng);
    }
    {
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.scale(a, 0.37);
        finish("scale", g, y, &[r, c], bind(vec![("a", rand_tensor(rng, &[r, c]))]), rng);
    }
    for causal in [false, true] {
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.softmax(a, causal);
        let name = if causal { "softmax_causal" } else { "softmax" };
        finish(name, g, y, &[c, c], bind(vec![("a", rand_tensor(rng, &[c, c]))]), rng);
    }
    {
        let mut g = Graph::new();
        let x = g.param("x");
        let gain = g.param("gain");
        let bias = g.param("bias");
        // Two-wide rows normalise to +-1 and have near-zero gradients, which
        // makes a relative comparison meaningless; use at least four columns.
        let w = c + 2;
        let mask: Vec<f64> = (0..w).map(|i| if i == 0 { 1.0 } else { rng.random_range(0.0..1.0) }).collect();
        let y = g.layernorm(x, gain, bias, Arc::new(mask), 1e-5);
        let b = bind(vec![
            ("x", rand_tensor(rng, &[r, w])),
            ("gain", rand_tensor(rng, &[w])),
            ("bias", rand_tensor(rng, &[w])),
        ]);
        finish("layernorm", g, y, &[r, w], b, rng);
    }
    {
        let mut g = Graph::new();
        let t = g.param("table");
        let ids: Vec<usize> = (0..r).map(|_| rng.random_range(0..5)).collect();
        let y = g.embedding(t, ids);
        finish("embedding", g, y, &[r, c], bind(vec![("table", rand_tensor(rng, &[5, c]))]), rng);
    }
    {
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.slice(a, 1..r, 0..c - 1);
        finish("slice", g, y, &[r - 1, c - 1], bind(vec![("a", rand_tensor(rng, &[r, c]))]), rng);
    }
    for axis in [Axis::Rows, Axis::Cols] {
        let mut g = Graph::new();
        let a = g.param("a");
        let b2 = g.param("b");
        let y = g.concat(vec![a, b2, a], axis);
        let (shape_b, out) = match axis {
            Axis::Rows => ([1, c], [2 * r + 1, c]),
            Axis::Cols => ([r, 1], [r, 2 * c + 1]),
        };
        let b = bind(vec![("a", rand_tensor(rng, &[r, c])), ("b", rand_tensor(rng, &shape_b))]);
        finish(if axis == Axis::Rows { "concat_rows" } else { "concat_cols" }, g, y, &out, b, rng);
    }
    for (f, name) in [(Nonlinearity::Gelu, "gelu"), (Nonlinearity::Tanh, "tanh"), (Nonlinearity::Exp, "exp")] {
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.unary(a, f);
        finish(name, g, y, &[r, c], bind(vec![("a", rand_tensor(rng, &[r, c]))]), rng);
    }
    {
        let pairs = 2;
        let n = r * pairs;
        let table = PairRotation {
            rows: r,
            pairs,
            cos: (0..n).map(|i| (i as f64 * 0.7).cos()).collect(),
            sin: (0..n).map(|i| (i as f64 * 0.7).sin()).collect(),
            scale: (0..n).map(|_| rng.random_range(0.5..1.5)).collect(),
        };
        let mut g = Graph::new();
        let a = g.param("a");
        let y = g.rotate_pairs(a, Arc::new(table));
        finish("rotate_pairs", g, y, &[r, 4], bind(vec![("a", rand_tensor(rng, &[r, 4]))]), rng);
    }
    {
        let mut g = Graph::new();
        let a = g.param("logits");
        let targets: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
        let mut weights: Vec<f64> = (0..r).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        weights[0] = 1.0;
        g.cross_entropy(a, targets, weights);
        out.push(("cross_entropy", g, bind(vec![("logits", rand_tensor(rng, &[r, c]))])));
    }
    out
}
