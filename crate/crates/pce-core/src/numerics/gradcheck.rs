//! Central finite-difference gradient checking.
//!
//! The checker only evaluates forward values, so it is independent of every
//! backward rule it verifies.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::numerics::graph::{Graph, Var};
use crate::numerics::nn::{LstmCell, MultiHeadAttention};
use crate::numerics::params::{Initializer, ParamStore};
use crate::numerics::{NumericsError, Tensor};

pub const FD_STEP: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients from
/// dominating the relative error.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Checks the gradient of a scalar function of several leaf tensors.
/// Returns the maximum relative error over every coordinate.
pub fn check_inputs<'s, F>(inputs: &[Tensor], f: F) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph<'s>, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t)).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss)[0])
    };

    let mut worst = 0.0f64;
    let mut probe = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let orig = t.data()[j];
            probe[ti].data_mut()[j] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe[ti].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[ti][j], numeric));
        }
    }
    Ok(worst)
}

/// Checks parameter gradients of a loss built from a [`ParamStore`].
/// `max_coords` bounds the number of coordinates probed per parameter
/// (chosen by a seeded RNG); `None` probes all.
pub fn check_params<F>(
    store: &ParamStore,
    max_coords: Option<usize>,
    seed: u64,
    f: F,
) -> Result<f64, NumericsError>
where
    F: for<'a> Fn(&mut Graph<'a>, &'a ParamStore) -> Result<Var, NumericsError>,
{
    let grads = {
        let mut g = Graph::new();
        let loss = f(&mut g, store)?;
        g.backward(loss)?;
        g.param_grads()?
    };
    let eval = |s: &ParamStore| -> Result<f64, NumericsError> {
        let mut g = Graph::new();
        let loss = f(&mut g, s)?;
        Ok(g.value(loss)[0])
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let t = store.get(id);
        if !t.requires_grad {
            continue;
        }
        let coords: Vec<usize> = match max_coords {
            Some(k) if k < t.len() => (0..k).map(|_| rng.gen_range(0..t.len())).collect(),
            _ => (0..t.len()).collect(),
        };
        let analytic = grads.get(id);
        for j in coords {
            let orig = t.data()[j];
            probe.get_mut(id).data_mut()[j] = orig + FD_STEP;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig - FD_STEP;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic.map_or(0.0, |g| g[j]);
            worst = worst.max(relative_error(a, numeric));
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// Values kept away from the ReLU kink so central differences stay on one side.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.gen_range(0.05..1.5);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("positive dims")
}

/// Reduces a matrix to a scalar through a fixed random weighting.
fn weighted_sum<'a>(g: &mut Graph<'a>, x: Var, weights: &Tensor) -> Result<Var, NumericsError> {
    let w = g.constant(weights);
    let p = g.mul(x, w)?;
    g.mean(p)
}

/// Names of the ops exercised by [`op_case`].
pub const OP_NAMES: &[&str] = &[
    "attention",
    "matmul",
    "add",
    "add_row",
    "mul",
    "scale",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "embedding",
    "sigmoid",
    "tanh",
    "relu",
    "layer_norm",
    "softmax_rows",
    "cross_entropy",
    "nll",
    "mean",
    "lstm_cell",
    "multi_head_attention",
];

/// Runs the finite-difference check for one op on random small shapes drawn from `seed`.
pub fn op_case(op: &str, seed: u64) -> Result<f64, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = rng.gen_range(1..5);
    let c = rng.gen_range(1..6);
    let k = rng.gen_range(1..5);
    let w = random_tensor(&mut rng, n, c, -1.0, 1.0);
    match op {
        "matmul" => {
            let a = random_tensor(&mut rng, n, k, -1.0, 1.0);
            let b = random_tensor(&mut rng, k, c, -1.0, 1.0);
            check_inputs(&[a, b], |g, v| {
                let y = g.matmul(v[0], v[1])?;
                weighted_sum(g, y, &w)
            })
        }
        "add" | "mul" => {
            let a = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let b = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let is_add = op == "add";
            check_inputs(&[a, b], |g, v| {
                let y = if is_add { g.add(v[0], v[1])? } else { g.mul(v[0], v[1])? };
                weighted_sum(g, y, &w)
            })
        }
        "add_row" => {
            let a = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let b = random_tensor(&mut rng, 1, c, -1.0, 1.0);
            check_inputs(&[a, b], |g, v| {
                let y = g.add_row(v[0], v[1])?;
                weighted_sum(g, y, &w)
            })
        }
        "scale" => {
            let a = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let s = rng.gen_range(-2.0..2.0);
            check_inputs(&[a], |g, v| {
                let y = g.scale(v[0], s)?;
                weighted_sum(g, y, &w)
            })
        }
        "concat_rows" => {
            let a = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let b = random_tensor(&mut rng, k, c, -1.0, 1.0);
            let w = random_tensor(&mut rng, n + k, c, -1.0, 1.0);
            check_inputs(&[a, b], |g, v| {
                let y = g.concat(v, 0)?;
                weighted_sum(g, y, &w)
            })
        }
        "concat_cols" => {
            let a = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let b = random_tensor(&mut rng, n, k, -1.0, 1.0);
            let w = random_tensor(&mut rng, n, c + k, -1.0, 1.0);
            check_inputs(&[a, b], |g, v| {
                let y = g.concat(v, 1)?;
                weighted_sum(g, y, &w)
            })
        }
        "slice_rows" | "slice_cols" => {
            let rows = n + 2;
            let cols = c + 2;
            let a = random_tensor(&mut rng, rows, cols, -1.0, 1.0);
            let axis = usize::from(op == "slice_cols");
            let extent = if axis == 0 { rows } else { cols };
            let start = rng.gen_range(0..extent);
            let len = rng.gen_range(1..=extent - start);
            let w = if axis == 0 {
                random_tensor(&mut rng, len, cols, -1.0, 1.0)
            } else {
                random_tensor(&mut rng, rows, len, -1.0, 1.0)
            };
            check_inputs(&[a], |g, v| {
                let y = g.slice(v[0], axis, start, len)?;
                weighted_sum(g, y, &w)
            })
        }
        "transpose" => {
            let a = random_tensor(&mut rng, c, n, -1.0, 1.0);
            check_inputs(&[a], |g, v| {
                let y = g.transpose(v[0])?;
                weighted_sum(g, y, &w)
            })
        }
        "embedding" => {
            let vocab = rng.gen_range(2..7);
            let table = random_tensor(&mut rng, vocab, c, -1.0, 1.0);
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
            check_inputs(&[table], |g, v| {
                let y = g.embedding(v[0], &idx)?;
                weighted_sum(g, y, &w)
            })
        }
        "sigmoid" | "tanh" | "relu" => {
            let a = away_from_zero(&mut rng, n, c);
            let name = op.to_string();
            check_inputs(&[a], |g, v| {
                let y = match name.as_str() {
                    "sigmoid" => g.sigmoid(v[0])?,
                    "tanh" => g.tanh(v[0])?,
                    _ => g.relu(v[0])?,
                };
                weighted_sum(g, y, &w)
            })
        }
        "layer_norm" => {
            let c = c.max(2);
            let w = random_tensor(&mut rng, n, c, -1.0, 1.0);
            let x = random_tensor(&mut rng, n, c, -2.0, 2.0);
            let gain = random_tensor(&mut rng, 1, c, 0.5, 1.5);
            let bias = random_tensor(&mut rng, 1, c, -0.5, 0.5);
            check_inputs(&[x, gain, bias], |g, v| {
                let y = g.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(g, y, &w)
            })
        }
        "softmax_rows" => {
            let x = random_tensor(&mut rng, n, c, -2.0, 2.0);
            let b = random_tensor(&mut rng, n, c, -2.0, 2.0);
            check_inputs(&[x, b], |g, v| {
                let y = g.softmax_rows(v[0], Some(v[1]))?;
                weighted_sum(g, y, &w)
            })
        }
        "cross_entropy" => {
            let c = c.max(2);
            let x = random_tensor(&mut rng, n, c, -2.0, 2.0);
            let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            check_inputs(&[x], |g, v| g.cross_entropy(v[0], &targets))
        }
        "nll" => {
            let c = c.max(2);
            let x = random_tensor(&mut rng, n, c, -2.0, 2.0);
            let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
            check_inputs(&[x], |g, v| {
                let p = g.softmax_rows(v[0], None)?;
                g.nll(p, &targets)
            })
        }
        "mean" => {
            let x = random_tensor(&mut rng, n, c, -2.0, 2.0);
            check_inputs(&[x], |g, v| {
                let sq = g.mul(v[0], v[0])?;
                g.mean(sq)
            })
        }
        "lstm_cell" => {
            let (din, hid) = (rng.gen_range(1..4), rng.gen_range(1..4));
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed);
            let cell = LstmCell::new(&mut store, &mut init, "cell", din, hid)?;
            let steps = rng.gen_range(1..4);
            let xs = random_tensor(&mut rng, steps, din, -1.0, 1.0);
            let wh = random_tensor(&mut rng, 1, hid, -1.0, 1.0);
            let wc = random_tensor(&mut rng, 1, hid, -1.0, 1.0);
            let through_params = check_params(&store, None, seed, |g, s| {
                let x = g.constant(&xs);
                let (h, c) = cell.run(g, s, x)?;
                let lh = weighted_sum(g, h, &wh)?;
                let lc = weighted_sum(g, c, &wc)?;
                g.add(lh, lc)
            })?;
            let through_input = check_inputs(&[xs.clone()], |g, v| {
                let (h, _) = cell.run(g, &store, v[0])?;
                weighted_sum(g, h, &wh)
            })?;
            Ok(through_params.max(through_input))
        }
        "multi_head_attention" => {
            let heads = rng.gen_range(1..3);
            let dim = heads * rng.gen_range(1..3);
            let seq = rng.gen_range(1..4);
            let mut store = ParamStore::new();
            let mut init = Initializer::new(seed);
            let mha = MultiHeadAttention::new(&mut store, &mut init, "mha", dim, heads)?;
            let x = random_tensor(&mut rng, seq, dim, -1.0, 1.0);
            let bias = random_tensor(&mut rng, seq, seq, -2.0, 2.0);
            let w = random_tensor(&mut rng, seq, dim, -1.0, 1.0);
            let through_params = check_params(&store, None, seed, |g, s| {
                let xv = g.constant(&x);
                let b = g.constant(&bias);
                let (y, _) = mha.forward(g, s, xv, Some(b))?;
                weighted_sum(g, y, &w)
            })?;
            let through_inputs = check_inputs(&[x.clone(), bias.clone()], |g, v| {
                let (y, _) = mha.forward(g, &store, v[0], Some(v[1]))?;
                weighted_sum(g, y, &w)
            })?;
            Ok(through_params.max(through_inputs))
        }
        "attention" => {
            let heads = rng.gen_range(1..3);
            let dim = heads * rng.gen_range(1..3);
            let lengths: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..4)).collect();
            let total: usize = lengths.iter().sum();
            let bias_len: usize = lengths.iter().map(|l| l * l).sum();
            let q = random_tensor(&mut rng, total, dim, -1.0, 1.0);
            let k = random_tensor(&mut rng, total, dim, -1.0, 1.0);
            let v = random_tensor(&mut rng, total, dim, -1.0, 1.0);
            let bias = random_tensor(&mut rng, 1, bias_len, -2.0, 2.0);
            let w = random_tensor(&mut rng, total, dim, -1.0, 1.0);
            check_inputs(&[q, k, v, bias], |g, x| {
                let y = g.attention(x[0], x[1], x[2], &lengths, heads, Some(x[3]))?;
                weighted_sum(g, y, &w)
            })
        }
        other => Err(NumericsError::Checkpoint(format!("unknown op case {other}"))),
    }
}
