//! Layers built on the tape: linear, embedding, layer norm, LSTM cell,
//! biased multi-head attention and a post-norm encoder block.

use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Initializer, ParamId, ParamStore};
use crate::numerics::{NumericsError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Self, NumericsError> {
        let weight = store.add(format!("{name}.weight"), init.uniform(vec![in_dim, out_dim], in_dim)?)?;
        let bias = store.add(format!("{name}.bias"), init.uniform(vec![1, out_dim], in_dim)?)?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var, NumericsError> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        vocab: usize,
        dim: usize,
    ) -> Result<Self, NumericsError> {
        let table = store.add(format!("{name}.table"), init.uniform(vec![vocab, dim], 1)?)?;
        Ok(Embedding { table, vocab, dim })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, indices: &[usize]) -> Result<Var, NumericsError> {
        let t = g.param(store, self.table);
        g.embedding(t, indices)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, init: &mut Initializer, name: &str, dim: usize) -> Result<Self, NumericsError> {
        let gain = store.add(format!("{name}.gain"), init.constant(vec![1, dim], 1.0)?)?;
        let bias = store.add(format!("{name}.bias"), init.constant(vec![1, dim], 0.0)?)?;
        Ok(LayerNorm { gain, bias })
    }

    pub fn forward<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, x: Var) -> Result<Var, NumericsError> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Standard LSTM cell; gate columns are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmCell {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        input_dim: usize,
        hidden: usize,
    ) -> Result<Self, NumericsError> {
        let w_input = store.add(format!("{name}.w_input"), init.uniform(vec![input_dim, 4 * hidden], hidden)?)?;
        let w_hidden = store.add(format!("{name}.w_hidden"), init.uniform(vec![hidden, 4 * hidden], hidden)?)?;
        let bias = store.add(format!("{name}.bias"), init.uniform(vec![1, 4 * hidden], hidden)?)?;
        Ok(LstmCell {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden,
        })
    }

    /// One step: `c_t = f⊙c_prev + i⊙g`, `h_t = o⊙tanh(c_t)`. Each row is an independent sequence.
    pub fn step<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x_t: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let rows = g.shape(x_t).0;
        for (name, v, want) in [("lstm_cell.x", x_t, self.input_dim), ("lstm_cell.h", h_prev, self.hidden), ("lstm_cell.c", c_prev, self.hidden)] {
            let s = g.shape(v);
            if s != (rows, want) {
                return Err(NumericsError::ShapeMismatch {
                    op: name,
                    shapes: vec![s, (rows, want)],
                });
            }
        }
        let wx = g.param(store, self.w_input);
        let b = g.param(store, self.bias);
        let zx = g.matmul(x_t, wx)?;
        let zx = g.add_row(zx, b)?;
        self.step_projected(g, store, zx, h_prev, c_prev)
    }

    /// Step from an already computed input projection `x_t·W_input + bias`, one row per sequence.
    pub fn step_projected<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        zx: Var,
        h_prev: Var,
        c_prev: Var,
    ) -> Result<(Var, Var), NumericsError> {
        let h = self.hidden;
        let wh = g.param(store, self.w_hidden);
        let zh = g.matmul(h_prev, wh)?;
        let z = g.add(zx, zh)?;
        let zi = g.slice(z, 1, 0, h)?;
        let zf = g.slice(z, 1, h, h)?;
        let zg = g.slice(z, 1, 2 * h, h)?;
        let zo = g.slice(z, 1, 3 * h, h)?;
        let i = g.sigmoid(zi)?;
        let f = g.sigmoid(zf)?;
        let cand = g.tanh(zg)?;
        let o = g.sigmoid(zo)?;
        let fc = g.mul(f, c_prev)?;
        let ig = g.mul(i, cand)?;
        let c = g.add(fc, ig)?;
        let tc = g.tanh(c)?;
        let h_t = g.mul(o, tc)?;
        Ok((h_t, c))
    }

    /// Runs the cell over the rows of `xs` from zero state and returns the final `(h, c)`.
    pub fn run<'a>(&self, g: &mut Graph<'a>, store: &'a ParamStore, xs: Var) -> Result<(Var, Var), NumericsError> {
        let (steps, _) = g.shape(xs);
        let zeros = Tensor::zeros(vec![1, self.hidden])?;
        let mut h = g.constant(&zeros);
        let mut c = g.constant(&zeros);
        for t in 0..steps {
            let x_t = g.slice(xs, 0, t, 1)?;
            (h, c) = self.step(g, store, x_t, h, c)?;
        }
        Ok((h, c))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        dim: usize,
        n_heads: usize,
    ) -> Result<Self, NumericsError> {
        if n_heads == 0 || dim % n_heads != 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "multi_head_attention",
                shapes: vec![(dim, n_heads)],
            });
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, init, &format!("{name}.query"), dim, dim)?,
            key: Linear::new(store, init, &format!("{name}.key"), dim, dim)?,
            value: Linear::new(store, init, &format!("{name}.value"), dim, dim)?,
            output: Linear::new(store, init, &format!("{name}.output"), dim, dim)?,
            n_heads,
            dim,
        })
    }

    /// `softmax(QKᵀ/√d_head + bias)·V` per head, concatenated and projected.
    /// Returns the output and the per-head attention matrices.
    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        bias: Option<Var>,
    ) -> Result<(Var, Vec<Var>), NumericsError> {
        let (n, d) = g.shape(x);
        if d != self.dim {
            return Err(NumericsError::ShapeMismatch {
                op: "multi_head_attention",
                shapes: vec![(n, d), (n, self.dim)],
            });
        }
        if let Some(b) = bias {
            if g.shape(b) != (n, n) {
                return Err(NumericsError::ShapeMismatch {
                    op: "multi_head_attention.bias",
                    shapes: vec![g.shape(b), (n, n)],
                });
            }
        }
        let dh = d / self.n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let logits = g.matmul(qh, kt)?;
            let logits = g.scale(logits, scale)?;
            let p = g.softmax_rows(logits, bias)?;
            heads.push(g.matmul(p, vh)?);
            probs.push(p);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat(&heads, 1)? };
        Ok((self.output.forward(g, store, cat)?, probs))
    }
}

impl MultiHeadAttention {
    /// Same computation as [`MultiHeadAttention::forward`] for several sequences stacked
    /// as rows of `x`, using one fused attention node. `bias` follows the layout of
    /// [`Graph::attention`].
    pub fn forward_batch<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        lengths: &[usize],
        bias: Option<Var>,
    ) -> Result<(Var, Var), NumericsError> {
        let q = self.query.forward(g, store, x)?;
        let k = self.key.forward(g, store, x)?;
        let v = self.value.forward(g, store, x)?;
        let att = g.attention(q, k, v, lengths, self.n_heads, bias)?;
        Ok((self.output.forward(g, store, att)?, att))
    }
}

/// Post-norm encoder block: attention → add & norm → ReLU feed-forward → add & norm.
#[derive(Debug, Clone, Copy)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Initializer,
        name: &str,
        dim: usize,
        n_heads: usize,
        ff_dim: usize,
    ) -> Result<Self, NumericsError> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(store, init, &format!("{name}.attn"), dim, n_heads)?,
            norm1: LayerNorm::new(store, init, &format!("{name}.norm1"), dim)?,
            ff_in: Linear::new(store, init, &format!("{name}.ff_in"), dim, ff_dim)?,
            ff_out: Linear::new(store, init, &format!("{name}.ff_out"), ff_dim, dim)?,
            norm2: LayerNorm::new(store, init, &format!("{name}.norm2"), dim)?,
        })
    }

    pub fn forward<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        bias: Option<Var>,
    ) -> Result<(Var, Vec<Var>), NumericsError> {
        let (a, probs) = self.attention.forward(g, store, x, bias)?;
        let r1 = g.add(x, a)?;
        let h1 = self.norm1.forward(g, store, r1)?;
        let f = self.ff_in.forward(g, store, h1)?;
        let f = g.relu(f)?;
        let f = self.ff_out.forward(g, store, f)?;
        let r2 = g.add(h1, f)?;
        Ok((self.norm2.forward(g, store, r2)?, probs))
    }
}

impl EncoderLayer {
    /// Batched form of [`EncoderLayer::forward`]; also returns the attention node for probing.
    pub fn forward_batch<'a>(
        &self,
        g: &mut Graph<'a>,
        store: &'a ParamStore,
        x: Var,
        lengths: &[usize],
        bias: Option<Var>,
    ) -> Result<(Var, Var), NumericsError> {
        let (a, att) = self.attention.forward_batch(g, store, x, lengths, bias)?;
        let r1 = g.add(x, a)?;
        let h1 = self.norm1.forward(g, store, r1)?;
        let f = self.ff_in.forward(g, store, h1)?;
        let f = g.relu(f)?;
        let f = self.ff_out.forward(g, store, f)?;
        let r2 = g.add(h1, f)?;
        Ok((self.norm2.forward(g, store, r2)?, att))
    }
}

/// Sinusoidal position table of shape `n×dim`.
pub fn sinusoidal_positions(n: usize, dim: usize) -> Result<Tensor, NumericsError> {
    let mut data = vec![0.0; n * dim];
    for pos in 0..n {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![n, dim], data)
}
