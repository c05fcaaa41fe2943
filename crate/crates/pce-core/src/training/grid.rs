use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::models::{EMB_GRID, FF_GRID};

use super::{train, PreparedSplits, TrainConfig, TrainReport, BATCH_GRID, LR_GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grids {
    pub lr: Vec<f64>,
    pub ff_dim: Vec<usize>,
    pub emb_dim: Vec<usize>,
    pub batch_size: Vec<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            lr: LR_GRID.to_vec(),
            ff_dim: FF_GRID.to_vec(),
            emb_dim: EMB_GRID.to_vec(),
            batch_size: BATCH_GRID.to_vec(),
        }
    }
}

impl Grids {
    /// Every combination, in declaration order with the batch size varying fastest.
    pub fn cells(&self) -> Vec<GridCell> {
        let mut out = Vec::new();
        for &lr in &self.lr {
            for &ff_dim in &self.ff_dim {
                for &emb_dim in &self.emb_dim {
                    for &batch_size in &self.batch_size {
                        out.push(GridCell {
                            index: out.len(),
                            lr,
                            ff_dim,
                            emb_dim,
                            batch_size,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    pub lr: f64,
    pub ff_dim: usize,
    pub emb_dim: usize,
    pub batch_size: usize,
}

impl GridCell {
    fn lexicographic(&self, other: &GridCell) -> Ordering {
        self.lr
            .total_cmp(&other.lr)
            .then(self.ff_dim.cmp(&other.ff_dim))
            .then(self.emb_dim.cmp(&other.emb_dim))
            .then(self.batch_size.cmp(&other.batch_size))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub rank: usize,
    pub cell: GridCell,
    pub val_macro_f1: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    /// `None` when the cell trained; otherwise the error.
    pub failure: Option<String>,
    #[serde(skip)]
    pub report: Option<TrainReport>,
}

impl GridResult {
    pub fn status(&self) -> &str {
        if self.failure.is_some() {
            "failed"
        } else {
            "ok"
        }
    }
}

/// Seed of a grid cell, independent of the order in which cells run.
fn cell_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains every grid combination of `base` in parallel and ranks the cells by
/// validation macro-F1, ties broken by (lr, ff_dim, emb_dim, batch_size).
/// Failed cells are kept, ranked after all successful ones.
pub fn grid_search(base: &TrainConfig, grids: &Grids, inputs: &PreparedSplits) -> Vec<GridResult> {
    let cells = grids.cells();
    let mut results: Vec<GridResult> = cells
        .par_iter()
        .map(|cell| {
            let mut cfg = base.clone();
            cfg.lr = cell.lr;
            cfg.batch_size = cell.batch_size;
            cfg.model.ff_dim = cell.ff_dim;
            cfg.model.emb_dim = cell.emb_dim;
            cfg.seed = cell_seed(base.seed, cell.index);
            match train(&cfg, inputs, None) {
                Ok((_, report)) => GridResult {
                    rank: 0,
                    cell: *cell,
                    val_macro_f1: Some(report.best_val_macro_f1),
                    val_accuracy: Some(report.best_val_accuracy),
                    best_epoch: Some(report.best_epoch),
                    failure: None,
                    report: Some(report),
                },
                Err(e) => GridResult {
                    rank: 0,
                    cell: *cell,
                    val_macro_f1: None,
                    val_accuracy: None,
                    best_epoch: None,
                    failure: Some(e.to_string()),
                    report: None,
                },
            }
        })
        .collect();
    results.sort_by(|a, b| match (a.val_macro_f1, b.val_macro_f1) {
        (Some(x), Some(y)) => y.total_cmp(&x).then(a.cell.lexicographic(&b.cell)),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cell.lexicographic(&b.cell),
    });
    for (i, r) in results.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    results
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// One CSV row per cell in rank order.
pub fn grid_csv(results: &[GridResult]) -> String {
    let mut out = String::from("rank,cell,lr,ff_dim,emb_dim,batch_size,status,val_macro_f1,val_accuracy,best_epoch,error\n");
    for r in results {
        let c = &r.cell;
        let err = r.failure.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},\"{}\"",
            r.rank,
            c.index,
            c.lr,
            c.ff_dim,
            c.emb_dim,
            c.batch_size,
            r.status(),
            opt(r.val_macro_f1),
            opt(r.val_accuracy),
            opt(r.best_epoch),
            err
        );
    }
    out
}
