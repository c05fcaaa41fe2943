//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so node order is already a
//! topological order; `backward` walks the tape once in reverse. All values on
//! the tape are matrices (a vector is a single row).

use crate::numerics::params::{ParamId, ParamStore};
use crate::numerics::tensor::{dot, gemm, matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor, View};
use crate::numerics::NumericsError;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Value<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Value<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { input: Var, axis: usize, start: usize },
    Transpose(Var),
    Embedding { table: Var, indices: Vec<usize> },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Softmax { logits: Var, bias: Option<Var> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    Nll { probs: Var, targets: Vec<usize> },
    Mean(Var),
    Attention {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<Var>,
        lengths: Vec<usize>,
        heads: usize,
        probs: Vec<f64>,
    },
}

struct Node<'a> {
    rows: usize,
    cols: usize,
    value: Value<'a>,
    op: Op,
    requires_grad: bool,
}

/// Gradients collected for parameters, indexed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    fn add(&mut self, id: ParamId, g: &[f64]) {
        if self.slots.len() <= id.0 {
            self.slots.resize(id.0 + 1, None);
        }
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    /// Adds `other` into `self` slot by slot.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, slot) in other.slots.iter().enumerate() {
            if let Some(g) = slot {
                self.add(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_deref().map(|g| (ParamId(i), g)))
    }
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

fn finite(op: &'static str, data: &[f64]) -> Result<(), NumericsError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

fn mismatch(op: &'static str, shapes: &[(usize, usize)]) -> NumericsError {
    NumericsError::ShapeMismatch {
        op,
        shapes: shapes.to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, value: Value<'a>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<'a> {
        &self.nodes[v.0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        self.node(v).value.as_slice()
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn rg(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    /// Constant input, copied onto the tape.
    pub fn constant(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, Value::Owned(t.data().to_vec()), Op::Leaf, false)
    }

    /// Constant input referencing caller-owned data without copying.
    pub fn constant_ref(&mut self, rows: usize, cols: usize, data: &'a [f64]) -> Result<Var, NumericsError> {
        if rows * cols != data.len() || rows == 0 || cols == 0 {
            return Err(NumericsError::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push(rows, cols, Value::Borrowed(data), Op::Leaf, false))
    }

    /// Differentiable leaf whose gradient is readable via [`Graph::grad`].
    pub fn variable(&mut self, t: &Tensor) -> Var {
        let (r, c) = t.dims2();
        self.push(r, c, Value::Owned(t.data().to_vec()), Op::Leaf, true)
    }

    /// Parameter leaf borrowed from a store; its gradient lands in [`Graph::param_grads`].
    pub fn param(&mut self, store: &'a ParamStore, id: ParamId) -> Var {
        let t = store.get(id);
        let (r, c) = t.dims2();
        self.push(r, c, Value::Borrowed(t.data()), Op::Param(id), t.requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(mismatch("matmul", &[(n, k), (k2, m)]));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(self.value(a), self.value(b), &mut out, n, k, m);
        finite("matmul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(n, m, Value::Owned(out), Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("add", &[sa, sb]));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        finite("add", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(sa.0, sa.1, Value::Owned(out), Op::Add(a, b), rg))
    }

    /// Adds a `1×c` row to every row of an `n×c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let sr = self.shape(row);
        if sr != (1, c) {
            return Err(mismatch("add_row", &[(n, c), sr]));
        }
        let r = self.value(row);
        let mut out = self.value(x).to_vec();
        for chunk in out.chunks_mut(c) {
            chunk.iter_mut().zip(r).for_each(|(o, b)| *o += b);
        }
        finite("add_row", &out)?;
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(n, c, Value::Owned(out), Op::AddRow(x, row), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(mismatch("mul", &[sa, sb]));
        }
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        finite("mul", &out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(sa.0, sa.1, Value::Owned(out), Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|v| v * factor).collect();
        finite("scale", &out)?;
        let rg = self.rg(x);
        Ok(self.push(n, c, Value::Owned(out), Op::Scale(x, factor), rg))
    }

    /// Concatenates along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let shapes: Vec<_> = inputs.iter().map(|&v| self.shape(v)).collect();
        if inputs.is_empty() || axis > 1 {
            return Err(mismatch("concat", &shapes));
        }
        let (rows, cols) = if axis == 0 {
            let c = shapes[0].1;
            if shapes.iter().any(|s| s.1 != c) {
                return Err(mismatch("concat", &shapes));
            }
            (shapes.iter().map(|s| s.0).sum(), c)
        } else {
            let r = shapes[0].0;
            if shapes.iter().any(|s| s.0 != r) {
                return Err(mismatch("concat", &shapes));
            }
            (r, shapes.iter().map(|s| s.1).sum())
        };
        let mut out = Vec::with_capacity(rows * cols);
        if axis == 0 {
            for &v in inputs {
                out.extend_from_slice(self.value(v));
            }
        } else {
            for r in 0..rows {
                for (&v, s) in inputs.iter().zip(&shapes) {
                    out.extend_from_slice(&self.value(v)[r * s.1..(r + 1) * s.1]);
                }
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            rows,
            cols,
            Value::Owned(out),
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Takes `len` rows (`axis = 0`) or columns (`axis = 1`) starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let extent = if axis == 0 { n } else { c };
        if axis > 1 || len == 0 || start + len > extent {
            return Err(mismatch("slice", &[(n, c), (start, len)]));
        }
        let v = self.value(x);
        let (rows, cols, out) = if axis == 0 {
            (len, c, v[start * c..(start + len) * c].to_vec())
        } else {
            let mut out = Vec::with_capacity(n * len);
            for r in 0..n {
                out.extend_from_slice(&v[r * c + start..r * c + start + len]);
            }
            (n, len, out)
        };
        let rg = self.rg(x);
        Ok(self.push(rows, cols, Value::Owned(out), Op::Slice { input: x, axis, start }, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let v = self.value(x);
        let mut out = vec![0.0; n * c];
        for i in 0..n {
            for j in 0..c {
                out[j * n + i] = v[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(c, n, Value::Owned(out), Op::Transpose(x), rg))
    }

    /// Gathers rows of `table` in the order of `indices`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var, NumericsError> {
        let (v, d) = self.shape(table);
        if indices.is_empty() {
            return Err(mismatch("embedding", &[(v, d), (0, 0)]));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: v });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&t[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            indices.len(),
            d,
            Value::Owned(out),
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, op_name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        finite(op_name, &out)?;
        let rg = self.rg(x);
        Ok(self.push(n, c, Value::Owned(out), op, rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, "sigmoid", sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, "tanh", f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, NumericsError> {
        self.unary(x, "relu", |v| v.max(0.0), Op::Relu(x))
    }

    /// Row-wise layer normalization with `1×c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(x);
        let (sg, sb) = (self.shape(gain), self.shape(bias));
        if sg != (1, c) || sb != (1, c) {
            return Err(mismatch("layer_norm", &[(n, c), sg, sb]));
        }
        let xv = self.value(x);
        let (gv, bv) = (self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; n * c];
        let mut inv_std = vec![0.0; n];
        let mut out = vec![0.0; n * c];
        for r in 0..n {
            let row = &xv[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * gv[j] + bv[j];
            }
        }
        finite("layer_norm", &out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            n,
            c,
            Value::Owned(out),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Row-wise softmax of `logits + bias`; the bias is added elementwise before normalization.
    pub fn softmax_rows(&mut self, logits: Var, bias: Option<Var>) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(logits);
        let mut z = self.value(logits).to_vec();
        if let Some(b) = bias {
            let sb = self.shape(b);
            if sb != (n, c) {
                return Err(mismatch("softmax_rows", &[(n, c), sb]));
            }
            z.iter_mut().zip(self.value(b)).for_each(|(v, bb)| *v += bb);
        }
        finite("softmax_rows", &z)?;
        for row in z.chunks_mut(c) {
            softmax_row(row);
        }
        finite("softmax_rows", &z)?;
        let rg = self.rg(logits) || bias.map_or(false, |b| self.rg(b));
        Ok(self.push(n, c, Value::Owned(z), Op::Softmax { logits, bias }, rg))
    }

    /// Mean cross-entropy of row-wise logits against one target class per row.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(logits);
        if targets.len() != n {
            return Err(mismatch("cross_entropy", &[(n, c), (targets.len(), 1)]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: c });
        }
        let mut probs = self.value(logits).to_vec();
        let mut loss = 0.0;
        for (r, row) in probs.chunks_mut(c).enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[targets[r]];
            softmax_row(row);
        }
        let loss = loss / n as f64;
        finite("cross_entropy", &[loss])?;
        let rg = self.rg(logits);
        Ok(self.push(
            1,
            1,
            Value::Owned(vec![loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean negative log-likelihood of row-wise probabilities.
    pub fn nll(&mut self, probs: Var, targets: &[usize]) -> Result<Var, NumericsError> {
        let (n, c) = self.shape(probs);
        if targets.len() != n {
            return Err(mismatch("nll", &[(n, c), (targets.len(), 1)]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(NumericsError::IndexOutOfRange { index: bad, size: c });
        }
        let p = self.value(probs);
        let loss = targets.iter().enumerate().map(|(r, &t)| -p[r * c + t].ln()).sum::<f64>() / n as f64;
        finite("nll", &[loss])?;
        let rg = self.rg(probs);
        Ok(self.push(
            1,
            1,
            Value::Owned(vec![loss]),
            Op::Nll {
                probs,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        finite("mean", &[m])?;
        let rg = self.rg(x);
        Ok(self.push(1, 1, Value::Owned(vec![m]), Op::Mean(x), rg))
    }

    /// Multi-head scaled dot-product attention over independent sequences stacked
    /// as rows. `q`, `k` and `v` are `N×d` with `N = Σ lengths`; each sequence only
    /// attends within itself. The optional `1×Σ len²` bias holds one row-major
    /// `len×len` block per sequence and is added to every head's scaled logits.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lengths: &[usize],
        heads: usize,
        bias: Option<Var>,
    ) -> Result<Var, NumericsError> {
        let (n, d) = self.shape(q);
        let (sk, sv) = (self.shape(k), self.shape(v));
        let total: usize = lengths.iter().sum();
        if sk != (n, d) || sv != (n, d) || total != n || lengths.contains(&0) || heads == 0 || d % heads != 0 {
            return Err(mismatch("attention", &[(n, d), sk, sv, (total, heads)]));
        }
        let bias_len: usize = lengths.iter().map(|l| l * l).sum();
        if let Some(b) = bias {
            if self.shape(b) != (1, bias_len) {
                return Err(mismatch("attention", &[(n, d), self.shape(b), (1, bias_len)]));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let bv = bias.map(|b| self.value(b));
        let mut out = vec![0.0; n * d];
        let mut probs = vec![0.0; heads * bias_len];
        let (mut row0, mut boff) = (0, 0);
        for &len in lengths {
            for h in 0..heads {
                let head = View::block(row0 * d + h * dh, len, dh, d);
                let poff = heads * boff + h * len * len;
                let pv = View::block(poff, len, len, len);
                gemm(scale, qv, head, kv, head.t(), 0.0, &mut probs, pv);
                let z = &mut probs[poff..poff + len * len];
                if let Some(bv) = bv {
                    z.iter_mut().zip(&bv[boff..boff + len * len]).for_each(|(z, b)| *z += b);
                }
                finite("attention", z)?;
                for row in z.chunks_mut(len) {
                    softmax_row(row);
                }
                gemm(1.0, &probs, pv, vv, head, 0.0, &mut out, head);
            }
            row0 += len;
            boff += len * len;
        }
        finite("attention", &out)?;
        let rg = self.rg(q) || self.rg(k) || self.rg(v) || bias.map_or(false, |b| self.rg(b));
        Ok(self.push(
            n,
            d,
            Value::Owned(out),
            Op::Attention {
                q,
                k,
                v,
                bias,
                lengths: lengths.to_vec(),
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Attention weights of an [`Graph::attention`] node: for sequence `s` and head
    /// `h`, a row-major `len×len` block. `None` for any other node.
    pub fn attention_probs(&self, node: Var, sequence: usize, head: usize) -> Option<&[f64]> {
        let Op::Attention { lengths, heads, probs, .. } = &self.node(node).op else {
            return None;
        };
        if sequence >= lengths.len() || head >= *heads {
            return None;
        }
        let before: usize = lengths[..sequence].iter().map(|l| l * l).sum::<usize>() * heads;
        let len = lengths[sequence];
        let start = before + head * len * len;
        Some(&probs[start..start + len * len])
    }

    /// Runs reverse accumulation from a scalar node. A tape supports exactly one backward pass.
    pub fn backward(&mut self, target: Var) -> Result<(), NumericsError> {
        if self.backward_done {
            return Err(NumericsError::BackwardTwice);
        }
        if self.shape(target) != (1, 1) {
            return Err(mismatch("backward", &[self.shape(target)]));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[target.0] = Some(vec![1.0]);

        for i in (0..=target.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), NumericsError> {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].requires_grad;
        fn slot<'s>(grads: &'s mut [Option<Vec<f64>>], v: Var, len: usize) -> &'s mut Vec<f64> {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }
        let len = |v: Var| nodes[v.0].rows * nodes[v.0].cols;

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (n, k) = (nodes[a.0].rows, nodes[a.0].cols);
                let m = nodes[b.0].cols;
                if want(*a) {
                    let bv = self.value(*b);
                    matmul_nt_acc(g, bv, slot(grads, *a, n * k), n, k, m);
                }
                if want(*b) {
                    let av = self.value(*a);
                    matmul_tn_acc(av, g, slot(grads, *b, k * m), n, k, m);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if want(v) {
                        slot(grads, v, g.len()).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::AddRow(x, row) => {
                if want(*x) {
                    slot(grads, *x, g.len()).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if want(*row) {
                    let c = node.cols;
                    let d = slot(grads, *row, c);
                    for chunk in g.chunks(c) {
                        d.iter_mut().zip(chunk).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let bv = self.value(*b);
                    let d = slot(grads, *a, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * bv[j];
                    }
                }
                if want(*b) {
                    let av = self.value(*a);
                    let d = slot(grads, *b, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * av[j];
                    }
                }
            }
            Op::Scale(x, f) => {
                if want(*x) {
                    slot(grads, *x, g.len()).iter_mut().zip(g).for_each(|(d, s)| *d += s * f);
                }
            }
            Op::Concat { inputs, axis } => {
                let total_cols = node.cols;
                let mut offset = 0;
                for &v in inputs {
                    let (r, c) = (nodes[v.0].rows, nodes[v.0].cols);
                    if want(v) {
                        let d = slot(grads, v, r * c);
                        if *axis == 0 {
                            let src = &g[offset * c..(offset + r) * c];
                            d.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        } else {
                            for row in 0..r {
                                let src = &g[row * total_cols + offset..row * total_cols + offset + c];
                                d[row * c..(row + 1) * c].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                            }
                        }
                    }
                    offset += if *axis == 0 { r } else { c };
                }
            }
            Op::Slice { input, axis, start } => {
                if want(*input) {
                    let c_in = nodes[input.0].cols;
                    let d = slot(grads, *input, len(*input));
                    if *axis == 0 {
                        let dst = &mut d[start * c_in..start * c_in + g.len()];
                        dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
                    } else {
                        let w = node.cols;
                        for r in 0..node.rows {
                            let dst = &mut d[r * c_in + start..r * c_in + start + w];
                            dst.iter_mut().zip(&g[r * w..(r + 1) * w]).for_each(|(d, s)| *d += s);
                        }
                    }
                }
            }
            Op::Transpose(x) => {
                if want(*x) {
                    let (n, c) = (nodes[x.0].rows, nodes[x.0].cols);
                    let d = slot(grads, *x, n * c);
                    for i in 0..n {
                        for j in 0..c {
                            d[i * c + j] += g[j * n + i];
                        }
                    }
                }
            }
            Op::Embedding { table, indices } => {
                if want(*table) {
                    let dim = node.cols;
                    let d = slot(grads, *table, len(*table));
                    for (r, &idx) in indices.iter().enumerate() {
                        let dst = &mut d[idx * dim..(idx + 1) * dim];
                        dst.iter_mut().zip(&g[r * dim..(r + 1) * dim]).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Sigmoid(x) => {
                if want(*x) {
                    let y = node.value.as_slice();
                    let d = slot(grads, *x, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Tanh(x) => {
                if want(*x) {
                    let y = node.value.as_slice();
                    let d = slot(grads, *x, g.len());
                    for j in 0..g.len() {
                        d[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Relu(x) => {
                if want(*x) {
                    let xv = self.value(*x);
                    let d = slot(grads, *x, g.len());
                    for j in 0..g.len() {
                        if xv[j] > 0.0 {
                            d[j] += g[j];
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (n, c) = (node.rows, node.cols);
                if want(*gain) {
                    let d = slot(grads, *gain, c);
                    for r in 0..n {
                        for j in 0..c {
                            d[j] += g[r * c + j] * xhat[r * c + j];
                        }
                    }
                }
                if want(*bias) {
                    let d = slot(grads, *bias, c);
                    for r in 0..n {
                        for j in 0..c {
                            d[j] += g[r * c + j];
                        }
                    }
                }
                if want(*x) {
                    let gv = self.value(*gain).to_vec();
                    let d = slot(grads, *x, n * c);
                    let cf = c as f64;
                    for r in 0..n {
                        let mut sum_dh = 0.0;
                        let mut sum_dh_h = 0.0;
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            sum_dh += dh;
                            sum_dh_h += dh * xhat[r * c + j];
                        }
                        for j in 0..c {
                            let dh = g[r * c + j] * gv[j];
                            d[r * c + j] += inv_std[r] / cf * (cf * dh - sum_dh - xhat[r * c + j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Softmax { logits, bias } => {
                let c = node.cols;
                let y = node.value.as_slice();
                let mut dz = vec![0.0; g.len()];
                for (r, (grow, yrow)) in g.chunks(c).zip(y.chunks(c)).enumerate() {
                    let s = dot(grow, yrow);
                    for j in 0..c {
                        dz[r * c + j] = yrow[j] * (grow[j] - s);
                    }
                }
                for v in std::iter::once(*logits).chain(*bias) {
                    if want(v) {
                        slot(grads, v, dz.len()).iter_mut().zip(&dz).for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                if want(*logits) {
                    let c = nodes[logits.0].cols;
                    let scale = g[0] / targets.len() as f64;
                    let d = slot(grads, *logits, probs.len());
                    for (r, &t) in targets.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[r * c + j] += scale * (probs[r * c + j] - onehot);
                        }
                    }
                }
            }
            Op::Nll { probs, targets } => {
                if want(*probs) {
                    let c = nodes[probs.0].cols;
                    let p = self.value(*probs);
                    let scale = g[0] / targets.len() as f64;
                    let d = slot(grads, *probs, len(*probs));
                    for (r, &t) in targets.iter().enumerate() {
                        d[r * c + t] -= scale / p[r * c + t];
                    }
                }
            }
            Op::Mean(x) => {
                if want(*x) {
                    let n = len(*x);
                    let s = g[0] / n as f64;
                    slot(grads, *x, n).iter_mut().for_each(|d| *d += s);
                }
            }
            Op::Attention {
                q,
                k,
                v,
                bias,
                lengths,
                heads,
                probs,
            } => {
                let d = node.cols;
                let n = node.rows;
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; n * d];
                let mut dv = vec![0.0; n * d];
                let bias_len: usize = lengths.iter().map(|l| l * l).sum();
                let mut db = vec![0.0; if bias.is_some() { bias_len } else { 0 }];
                let (mut row0, mut boff) = (0, 0);
                let mut dz = Vec::new();
                for &len in lengths {
                    for h in 0..*heads {
                        let head = View::block(row0 * d + h * dh, len, dh, d);
                        let poff = heads * boff + h * len * len;
                        let pv = View::block(poff, len, len, len);
                        let zv = View::block(0, len, len, len);
                        gemm(1.0, probs, pv.t(), g, head, 1.0, &mut dv, head);
                        dz.clear();
                        dz.resize(len * len, 0.0);
                        gemm(1.0, g, head, vv, head.t(), 0.0, &mut dz, zv);
                        let p = &probs[poff..poff + len * len];
                        for (dzr, pr) in dz.chunks_mut(len).zip(p.chunks(len)) {
                            let s = dot(dzr, pr);
                            dzr.iter_mut().zip(pr).for_each(|(z, p)| *z = p * (*z - s));
                        }
                        if !db.is_empty() {
                            db[boff..boff + len * len].iter_mut().zip(&dz).for_each(|(a, b)| *a += b);
                        }
                        gemm(scale, &dz, zv, kv, head, 1.0, &mut dq, head);
                        gemm(scale, &dz, zv.t(), qv, head, 1.0, &mut dk, head);
                    }
                    row0 += len;
                    boff += len * len;
                }
                for (var, buf) in [(*q, &dq), (*k, &dk), (*v, &dv)] {
                    if want(var) {
                        slot(grads, var, n * d).iter_mut().zip(buf).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(b) = bias {
                    if want(*b) {
                        slot(grads, *b, bias_len).iter_mut().zip(&db).for_each(|(a, x)| *a += x);
                    }
                }
            }
        }
        Ok(())
    }

    /// Parameter gradients from the completed backward pass.
    pub fn param_grads(&self) -> Result<Gradients, NumericsError> {
        if !self.backward_done {
            return Err(NumericsError::NoBackward);
        }
        let mut out = Gradients::default();
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                if node.requires_grad {
                    finite("backward", g)?;
                    out.add(*id, g);
                }
            }
        }
        Ok(out)
    }
}
