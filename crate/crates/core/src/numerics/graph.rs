//! Define-then-run computation graph with reverse-mode differentiation.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::sync::Arc;

use super::kernels::{self, NormStats};
use super::{NumericsError, Tensor};
use crate::scalar::Scalar;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Nonlinearity {
    Gelu,
    Tanh,
    Exp,
}

/// Precomputed per-row, per-pair rotation and scale factors.
///
/// Row `r`, pair `p` maps `(x[2p], x[2p+1])` to
/// `scale * (x0 cos - x1 sin, x0 sin + x1 cos)`.
#[derive(Clone, Debug)]
pub struct PairRotation<T> {
    pub rows: usize,
    pub pairs: usize,
    pub cos: Vec<T>,
    pub sin: Vec<T>,
    pub scale: Vec<T>,
}

#[derive(Clone, Debug)]
pub enum Op<T> {
    /// Named leaf bound at evaluation time. Gradients are reported for leaves
    /// created with [`Graph::param`].
    Input { name: String, requires_grad: bool },
    Const(Arc<Tensor<T>>),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `x[r, c] * v[c]`
    MulRow(NodeId, NodeId),
    /// `x[r, c] + v[c]`
    AddRow(NodeId, NodeId),
    Scale(NodeId, T),
    Softmax { x: NodeId, causal: bool },
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, mask: Arc<Vec<T>>, eps: T },
    Embedding { table: NodeId, ids: Arc<Vec<usize>> },
    Slice { x: NodeId, rows: Range<usize>, cols: Range<usize> },
    Concat { parts: Vec<NodeId>, axis: Axis },
    Unary(NodeId, Nonlinearity),
    RotatePairs { x: NodeId, table: Arc<PairRotation<T>> },
    /// Mean over weighted rows of `-log softmax(logits)[target]`.
    CrossEntropy { logits: NodeId, targets: Arc<Vec<usize>>, weights: Arc<Vec<T>> },
    Sum(NodeId),
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Const(_) => "const",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::MulRow(..) => "mul_row",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layernorm",
            Op::Embedding { .. } => "embedding",
            Op::Slice { .. } => "slice",
            Op::Concat { .. } => "concat",
            Op::Unary(..) => "unary",
            Op::RotatePairs { .. } => "rotate_pairs",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Sum(_) => "sum",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Const(_) => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::MulRow(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::Softmax { x, .. }
            | Op::Slice { x, .. }
            | Op::Unary(x, _)
            | Op::RotatePairs { x, .. }
            | Op::Sum(x) => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Embedding { table, .. } => vec![*table],
            Op::Concat { parts, .. } => parts.clone(),
            Op::CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

/// Source of named leaf values.
pub trait Bindings<T> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>>;
}

impl<T> Bindings<T> for HashMap<String, Tensor<T>> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

impl<T> Bindings<T> for BTreeMap<String, Tensor<T>> {
    fn lookup(&self, name: &str) -> Option<&Tensor<T>> {
        self.get(name)
    }
}

/// Nodes in topological order: a node may only reference earlier nodes.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Op<T>>,
    output: Option<NodeId>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), output: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn op(&self, id: NodeId) -> &Op<T> {
        &self.nodes[id]
    }

    fn push(&mut self, op: Op<T>) -> NodeId {
        for i in op.inputs() {
            assert!(i < self.nodes.len(), "node {i} referenced before definition");
        }
        self.nodes.push(op);
        self.nodes.len() - 1
    }

    /// Graph output; defaults to the last node.
    pub fn output(&self) -> NodeId {
        self.output.unwrap_or(self.nodes.len().saturating_sub(1))
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert!(id < self.nodes.len());
        self.output = Some(id);
    }

    pub fn input(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input { name: name.into(), requires_grad: false })
    }

    pub fn param(&mut self, name: impl Into<String>) -> NodeId {
        self.push(Op::Input { name: name.into(), requires_grad: true })
    }

    pub fn constant(&mut self, t: Tensor<T>) -> NodeId {
        self.push(Op::Const(Arc::new(t)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Transpose(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn mul_row(&mut self, x: NodeId, v: NodeId) -> NodeId {
        self.push(Op::MulRow(x, v))
    }

    pub fn add_row(&mut self, x: NodeId, v: NodeId) -> NodeId {
        self.push(Op::AddRow(x, v))
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> NodeId {
        self.push(Op::Scale(x, factor))
    }

    pub fn softmax(&mut self, x: NodeId, causal: bool) -> NodeId {
        self.push(Op::Softmax { x, causal })
    }

    pub fn layernorm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, mask: Arc<Vec<T>>, eps: T) -> NodeId {
        self.push(Op::LayerNorm { x, gain, bias, mask, eps })
    }

    pub fn embedding(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        self.push(Op::Embedding { table, ids: Arc::new(ids) })
    }

    pub fn slice(&mut self, x: NodeId, rows: Range<usize>, cols: Range<usize>) -> NodeId {
        self.push(Op::Slice { x, rows, cols })
    }

    pub fn concat(&mut self, parts: Vec<NodeId>, axis: Axis) -> NodeId {
        self.push(Op::Concat { parts, axis })
    }

    pub fn unary(&mut self, x: NodeId, f: Nonlinearity) -> NodeId {
        self.push(Op::Unary(x, f))
    }

    pub fn rotate_pairs(&mut self, x: NodeId, table: Arc<PairRotation<T>>) -> NodeId {
        self.push(Op::RotatePairs { x, table })
    }

    pub fn cross_entropy(&mut self, logits: NodeId, targets: Vec<usize>, weights: Vec<T>) -> NodeId {
        self.push(Op::CrossEntropy { logits, targets: Arc::new(targets), weights: Arc::new(weights) })
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    /// Runs the forward pass over every node.
    pub fn forward<'a, B: Bindings<T>>(&'a self, bindings: &'a B) -> Result<ForwardPass<'a, T>, NumericsError> {
        let mut values: Vec<Cow<'a, Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        let mut aux: Vec<Option<NormStats<T>>> = Vec::with_capacity(self.nodes.len());
        for (id, op) in self.nodes.iter().enumerate() {
            let (v, a) = eval_node(id, op, &values, bindings)?;
            values.push(v);
            aux.push(a);
        }
        Ok(ForwardPass { graph: self, values, aux })
    }

    /// Forward value of the graph output.
    pub fn evaluate<B: Bindings<T>>(&self, bindings: &B) -> Result<Tensor<T>, NumericsError> {
        let pass = self.forward(bindings)?;
        Ok(pass.value(self.output()).clone())
    }

    /// Forward value of the (scalar) output and its gradient with respect to
    /// every parameter leaf.
    pub fn evaluate_with_gradients<B: Bindings<T>>(
        &self,
        bindings: &B,
    ) -> Result<(Tensor<T>, Gradients<T>), NumericsError> {
        let pass = self.forward(bindings)?;
        let grads = pass.backward(self.output())?;
        Ok((pass.value(self.output()).clone(), grads))
    }
}

/// Gradients keyed by parameter leaf name.
#[derive(Clone, Debug, Default)]
pub struct Gradients<T> {
    pub by_name: BTreeMap<String, Tensor<T>>,
}

impl<T> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.by_name.get(name)
    }
}

pub struct ForwardPass<'a, T: Scalar> {
    graph: &'a Graph<T>,
    values: Vec<Cow<'a, Tensor<T>>>,
    aux: Vec<Option<NormStats<T>>>,
}

fn mismatch(node: NodeId, op: &'static str, detail: String) -> NumericsError {
    NumericsError::ShapeMismatch { node, op, detail }
}

fn matrix_dims<T: Scalar>(t: &Tensor<T>, node: NodeId, op: &'static str) -> Result<(usize, usize), NumericsError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(mismatch(node, op, format!("expected a matrix, got {s:?}"))),
    }
}

fn unary_apply<T: Scalar>(f: Nonlinearity, v: T) -> T {
    match f {
        Nonlinearity::Gelu => kernels::gelu(v),
        Nonlinearity::Tanh => v.tanh(),
        Nonlinearity::Exp => v.exp(),
    }
}

type NodeValue<'a, T> = (Cow<'a, Tensor<T>>, Option<NormStats<T>>);

fn eval_node<'a, T: Scalar, B: Bindings<T>>(
    id: NodeId,
    op: &'a Op<T>,
    values: &[Cow<'a, Tensor<T>>],
    bindings: &'a B,
) -> Result<NodeValue<'a, T>, NumericsError> {
    let name = op.name();
    let v = |i: NodeId| -> &Tensor<T> { values[i].as_ref() };
    let owned = |t: Tensor<T>| -> Result<NodeValue<'a, T>, NumericsError> { Ok((Cow::Owned(t), None)) };
    match op {
        Op::Input { name: leaf, .. } => {
            let t = bindings.lookup(leaf).ok_or_else(|| NumericsError::Unbound(leaf.clone()))?;
            Ok((Cow::Borrowed(t), None))
        }
        Op::Const(t) => Ok((Cow::Owned((**t).clone()), None)),
        Op::MatMul(a, b) => {
            let (m, k) = matrix_dims(v(*a), id, name)?;
            let (k2, n) = matrix_dims(v(*b), id, name)?;
            if k != k2 {
                return Err(mismatch(id, name, format!("inner dims {k} vs {k2}")));
            }
            let mut out = vec![T::zero(); m * n];
            T::gemm(m, k, n, v(*a).data(), false, v(*b).data(), false, T::zero(), &mut out);
            owned(Tensor::new(vec![m, n], out)?)
        }
        Op::Transpose(x) => {
            let (r, c) = matrix_dims(v(*x), id, name)?;
            let d = v(*x).data();
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            owned(Tensor::new(vec![c, r], out)?)
        }
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (ta, tb) = (v(*a), v(*b));
            if ta.shape() != tb.shape() {
                return Err(mismatch(id, name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
            }
            let add = matches!(op, Op::Add(..));
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| if add { x + y } else { x * y })
                .collect();
            owned(Tensor::new(ta.shape().to_vec(), data)?)
        }
        Op::MulRow(x, r) | Op::AddRow(x, r) => {
            let (tx, tr) = (v(*x), v(*r));
            let (_, cols) = tx.as_matrix();
            if tr.len() != cols {
                return Err(mismatch(id, name, format!("row vector of {} for {cols} columns", tr.len())));
            }
            let add = matches!(op, Op::AddRow(..));
            let rv = tr.data();
            let data = tx
                .data()
                .iter()
                .enumerate()
                .map(|(i, &e)| if add { e + rv[i % cols] } else { e * rv[i % cols] })
                .collect();
            owned(Tensor::new(tx.shape().to_vec(), data)?)
        }
        Op::Scale(x, f) => owned(v(*x).map(|e| e * *f)),
        Op::Softmax { x, causal } => {
            let t = v(*x);
            let (r, c) = t.as_matrix();
            if *causal && r != c {
                return Err(mismatch(id, name, format!("causal softmax needs a square matrix, got {r}x{c}")));
            }
            let mut out = vec![T::zero(); r * c];
            kernels::softmax_rows(t.data(), r, c, *causal, &mut out);
            owned(Tensor::new(t.shape().to_vec(), out)?)
        }
        Op::LayerNorm { x, gain, bias, mask, eps } => {
            let t = v(*x);
            let (r, c) = t.as_matrix();
            let (g, b) = (v(*gain), v(*bias));
            if g.len() != c || b.len() != c || mask.len() != c {
                return Err(mismatch(
                    id,
                    name,
                    format!("width {c} with gain {}, bias {}, mask {}", g.len(), b.len(), mask.len()),
                ));
            }
            if *eps <= T::zero() {
                return Err(NumericsError::InvalidArgument("layernorm eps must be positive".into()));
            }
            if mask.iter().fold(T::zero(), |a, &m| a + m) <= T::zero() {
                return Err(NumericsError::InvalidArgument("layernorm mask sums to zero".into()));
            }
            let mut out = vec![T::zero(); r * c];
            let stats = kernels::masked_layernorm_rows(t.data(), r, c, g.data(), b.data(), mask, *eps, &mut out);
            Ok((Cow::Owned(Tensor::new(t.shape().to_vec(), out)?), Some(stats)))
        }
        Op::Embedding { table, ids } => {
            let t = v(*table);
            let (vocab, d) = matrix_dims(t, id, name)?;
            let mut out = Vec::with_capacity(ids.len() * d);
            for &tok in ids.iter() {
                if tok >= vocab {
                    return Err(mismatch(id, name, format!("token id {tok} outside vocabulary of {vocab}")));
                }
                out.extend_from_slice(t.row(tok));
            }
            owned(Tensor::new(vec![ids.len(), d], out)?)
        }
        Op::Slice { x, rows, cols } => {
            let t = v(*x);
            let (r, c) = matrix_dims(t, id, name)?;
            if rows.end > r || cols.end > c || rows.is_empty() || cols.is_empty() {
                return Err(mismatch(id, name, format!("slice {rows:?}x{cols:?} of {r}x{c}")));
            }
            let mut out = Vec::with_capacity(rows.len() * cols.len());
            for i in rows.clone() {
                out.extend_from_slice(&t.data()[i * c + cols.start..i * c + cols.end]);
            }
            owned(Tensor::new(vec![rows.len(), cols.len()], out)?)
        }
        Op::Concat { parts, axis } => {
            if parts.is_empty() {
                return Err(mismatch(id, name, "no parts".into()));
            }
            let dims: Vec<(usize, usize)> =
                parts.iter().map(|&p| matrix_dims(v(p), id, name)).collect::<Result<_, _>>()?;
            match axis {
                Axis::Rows => {
                    let c = dims[0].1;
                    if dims.iter().any(|d| d.1 != c) {
                        return Err(mismatch(id, name, format!("column counts differ: {dims:?}")));
                    }
                    let mut out = Vec::new();
                    for &p in parts {
                        out.extend_from_slice(v(p).data());
                    }
                    let r = dims.iter().map(|d| d.0).sum();
                    owned(Tensor::new(vec![r, c], out)?)
                }
                Axis::Cols => {
                    let r = dims[0].0;
                    if dims.iter().any(|d| d.0 != r) {
                        return Err(mismatch(id, name, format!("row counts differ: {dims:?}")));
                    }
                    let c: usize = dims.iter().map(|d| d.1).sum();
                    let mut out = Vec::with_capacity(r * c);
                    for i in 0..r {
                        for (&p, d) in parts.iter().zip(&dims) {
                            out.extend_from_slice(&v(p).data()[i * d.1..(i + 1) * d.1]);
                        }
                    }
                    owned(Tensor::new(vec![r, c], out)?)
                }
            }
        }
        Op::Unary(x, f) => owned(v(*x).map(|e| unary_apply(*f, e))),
        Op::RotatePairs { x, table } => {
            let t = v(*x);
            let (r, c) = matrix_dims(t, id, name)?;
            if r != table.rows || c != 2 * table.pairs {
                return Err(mismatch(id, name, format!("{r}x{c} vs table {}x{}", table.rows, 2 * table.pairs)));
            }
            let d = t.data();
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for p in 0..table.pairs {
                    let k = i * table.pairs + p;
                    let (co, si, sc) = (table.cos[k], table.sin[k], table.scale[k]);
                    let (x0, x1) = (d[i * c + 2 * p], d[i * c + 2 * p + 1]);
                    out[i * c + 2 * p] = sc * (x0 * co - x1 * si);
                    out[i * c + 2 * p + 1] = sc * (x0 * si + x1 * co);
                }
            }
            owned(Tensor::new(vec![r, c], out)?)
        }
        Op::CrossEntropy { logits, targets, weights } => {
            let t = v(*logits);
            let (r, c) = matrix_dims(t, id, name)?;
            if targets.len() != r || weights.len() != r {
                return Err(mismatch(
                    id,
                    name,
                    format!("{r} rows, {} targets, {} weights", targets.len(), weights.len()),
                ));
            }
            let wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
            if wsum <= T::zero() {
                return Err(NumericsError::InvalidArgument("loss mask selects no positions".into()));
            }
            let mut total = T::zero();
            for i in 0..r {
                if weights[i] == T::zero() {
                    continue;
                }
                if targets[i] >= c {
                    return Err(mismatch(id, name, format!("target {} outside {c} classes", targets[i])));
                }
                let row = t.row(i);
                let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let lse = row.iter().fold(T::zero(), |a, &b| a + (b - max).exp()).ln() + max;
                total += weights[i] * (lse - row[targets[i]]);
            }
            owned(Tensor::scalar(total / wsum))
        }
        Op::Sum(x) => owned(Tensor::scalar(v(*x).sum())),
    }
}

impl<'a, T: Scalar> ForwardPass<'a, T> {
    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        self.values[id].as_ref()
    }

    /// Reverse sweep from `output`, which must hold a single value.
    pub fn backward(&self, output: NodeId) -> Result<Gradients<T>, NumericsError> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(NumericsError::NonScalarOutput(out.shape().to_vec()));
        }
        let nodes = &self.graph.nodes;
        // Only nodes between a parameter leaf and the output take part.
        let mut wants = vec![false; nodes.len()];
        for (id, op) in nodes.iter().enumerate().take(output + 1) {
            wants[id] = match op {
                Op::Input { requires_grad, .. } => *requires_grad,
                _ => op.inputs().iter().any(|&i| wants[i]),
            };
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; output + 1];
        grads[output] = Some(Tensor::full(out.shape(), T::one()));

        for id in (0..=output).rev() {
            if !wants[id] {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if let Op::Input { .. } = nodes[id] {
                grads[id] = Some(g);
                continue;
            }
            self.backprop_node(id, &g, &wants, &mut grads)?;
        }

        let mut result = Gradients::default();
        for (id, op) in nodes.iter().enumerate() {
            if let Op::Input { name, requires_grad: true } = op {
                let g = match grads.get_mut(id).and_then(|g| g.take()) {
                    Some(g) => g,
                    None => Tensor::zeros(self.value(id).shape()),
                };
                match result.by_name.get_mut(name) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        result.by_name.insert(name.clone(), g);
                    }
                }
            }
        }
        Ok(result)
    }

    fn backprop_node(
        &self,
        id: NodeId,
        g: &Tensor<T>,
        wants: &[bool],
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<(), NumericsError> {
        let op = &self.graph.nodes[id];
        let val = |i: NodeId| self.value(i);
        let mut acc = |target: NodeId, f: &mut dyn FnMut(&mut [T])| {
            if !wants[target] {
                return;
            }
            let slot = &mut grads[target];
            if slot.is_none() {
                *slot = Some(Tensor::zeros(self.value(target).shape()));
            }
            f(slot.as_mut().unwrap().data_mut());
        };
        let gd = g.data();
        match op {
            Op::Input { .. } | Op::Const(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = val(*a).as_matrix();
                let (_, n) = val(*b).as_matrix();
                let (ad, bd) = (val(*a).data(), val(*b).data());
                // dA = dC * B^T ; dB = A^T * dC
                acc(*a, &mut |da| T::gemm(m, n, k, gd, false, bd, true, T::one(), da));
                acc(*b, &mut |db| T::gemm(k, m, n, ad, true, gd, false, T::one(), db));
            }
            Op::Transpose(x) => {
                let (r, c) = val(*x).as_matrix();
                acc(*x, &mut |dx| {
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] += gd[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |da| da.iter_mut().zip(gd).for_each(|(d, &e)| *d += e));
                acc(*b, &mut |db| db.iter_mut().zip(gd).for_each(|(d, &e)| *d += e));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |da| {
                    for i in 0..da.len() {
                        da[i] += gd[i] * bd[i];
                    }
                });
                acc(*b, &mut |db| {
                    for i in 0..db.len() {
                        db[i] += gd[i] * ad[i];
                    }
                });
            }
            Op::MulRow(x, r) => {
                let (xd, rd) = (val(*x).data(), val(*r).data());
                let cols = rd.len();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        dx[i] += gd[i] * rd[i % cols];
                    }
                });
                acc(*r, &mut |dr| {
                    for i in 0..xd.len() {
                        dr[i % cols] += gd[i] * xd[i];
                    }
                });
            }
            Op::AddRow(x, r) => {
                let cols = val(*r).len();
                acc(*x, &mut |dx| dx.iter_mut().zip(gd).for_each(|(d, &e)| *d += e));
                acc(*r, &mut |dr| {
                    for (i, &e) in gd.iter().enumerate() {
                        dr[i % cols] += e;
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |dx| dx.iter_mut().zip(gd).for_each(|(d, &e)| *d += e * *f)),
            Op::Softmax { x, .. } => {
                let y = val(id);
                let (r, c) = y.as_matrix();
                acc(*x, &mut |dx| kernels::softmax_rows_backward(y.data(), gd, r, c, dx));
            }
            Op::LayerNorm { x, gain, bias, mask, .. } => {
                let stats = self.aux[id].as_ref().expect("layernorm stats recorded");
                let (r, c) = val(*x).as_matrix();
                let gainv = val(*gain).data().to_vec();
                // Three separate slots; collect each then accumulate.
                let mut dx = wants[*x].then(|| vec![T::zero(); r * c]);
                let mut dg = wants[*gain].then(|| vec![T::zero(); c]);
                let mut db = wants[*bias].then(|| vec![T::zero(); c]);
                kernels::masked_layernorm_rows_backward(
                    stats,
                    gd,
                    r,
                    c,
                    &gainv,
                    mask,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                for (target, part) in [(*x, dx), (*gain, dg), (*bias, db)] {
                    if let Some(part) = part {
                        acc(target, &mut |d| d.iter_mut().zip(&part).for_each(|(d, &e)| *d += e));
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let (_, d) = val(*table).as_matrix();
                acc(*table, &mut |dt| {
                    for (row, &tok) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[tok * d + j] += gd[row * d + j];
                        }
                    }
                });
            }
            Op::Slice { x, rows, cols } => {
                let (_, c) = val(*x).as_matrix();
                let w = cols.len();
                acc(*x, &mut |dx| {
                    for (k, i) in rows.clone().enumerate() {
                        for j in 0..w {
                            dx[i * c + cols.start + j] += gd[k * w + j];
                        }
                    }
                });
            }
            Op::Concat { parts, axis } => {
                let total_cols = g.as_matrix().1;
                let mut offset = 0;
                for &p in parts {
                    let (pr, pc) = val(p).as_matrix();
                    match axis {
                        Axis::Rows => {
                            let start = offset * pc;
                            acc(p, &mut |dp| {
                                dp.iter_mut().zip(&gd[start..start + pr * pc]).for_each(|(d, &e)| *d += e)
                            });
                            offset += pr;
                        }
                        Axis::Cols => {
                            let off = offset;
                            acc(p, &mut |dp| {
                                for i in 0..pr {
                                    for j in 0..pc {
                                        dp[i * pc + j] += gd[i * total_cols + off + j];
                                    }
                                }
                            });
                            offset += pc;
                        }
                    }
                }
            }
            Op::Unary(x, f) => {
                let xd = val(*x).data();
                let yd = val(id).data();
                acc(*x, &mut |dx| {
                    for i in 0..dx.len() {
                        let local = match f {
                            Nonlinearity::Gelu => kernels::gelu_grad(xd[i]),
                            Nonlinearity::Tanh => T::one() - yd[i] * yd[i],
                            Nonlinearity::Exp => yd[i],
                        };
                        dx[i] += gd[i] * local;
                    }
                });
            }
            Op::RotatePairs { x, table } => {
                let c = 2 * table.pairs;
                acc(*x, &mut |dx| {
                    for i in 0..table.rows {
                        for p in 0..table.pairs {
                            let k = i * table.pairs + p;
                            let (co, si, sc) = (table.cos[k], table.sin[k], table.scale[k]);
                            let (g0, g1) = (gd[i * c + 2 * p], gd[i * c + 2 * p + 1]);
                            dx[i * c + 2 * p] += sc * (g0 * co + g1 * si);
                            dx[i * c + 2 * p + 1] += sc * (g1 * co - g0 * si);
                        }
                    }
                });
            }
            Op::CrossEntropy { logits, targets, weights } => {
                let t = val(*logits);
                let (r, c) = t.as_matrix();
                let wsum = weights.iter().fold(T::zero(), |a, &w| a + w);
                let scale = gd[0] / wsum;
                acc(*logits, &mut |dl| {
                    let mut probs = vec![T::zero(); c];
                    for i in 0..r {
                        if weights[i] == T::zero() {
                            continue;
                        }
                        kernels::softmax_rows(t.row(i), 1, c, false, &mut probs);
                        let w = weights[i] * scale;
                        for j in 0..c {
                            dl[i * c + j] += w * probs[j];
                        }
                        dl[i * c + targets[i]] -= w;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |dx| dx.iter_mut().for_each(|d| *d += gd[0])),
        }
        Ok(())
    }
}
