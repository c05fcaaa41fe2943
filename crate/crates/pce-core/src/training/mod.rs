//! Mini-batch AdamW training with best-epoch selection on validation macro-F1,
//! lockstep ensemble training and exhaustive grid search.

mod grid;

pub use grid::{grid_csv, grid_search, GridCell, GridResult, Grids};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{PceLabel, Splits};
use crate::evaluation::{evaluate, EvalError, Protocol};
use crate::models::{
    ensemble_forward, FeatureProvider, Model, ModelConfig, ModelError, ModelKind, MultimodalTransformer, Network,
    PerceptionLstm, Prediction, Prepared,
};
use crate::numerics::{AdamWConfig, AdamWState, Graph, NumericsError, ParamStore};

pub const LR_GRID: [f64; 4] = [1e-4, 5e-4, 1e-5, 5e-5];
pub const BATCH_GRID: [usize; 3] = [16, 64, 128];
pub const MAX_EPOCHS: usize = 30;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Diverged { epoch: usize, batch: usize, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub model: ModelConfig,
    /// Accept values outside the search grids.
    pub allow_off_grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::Pgmt,
            lr: 1e-4,
            batch_size: 128,
            max_epochs: MAX_EPOCHS,
            weight_decay: 0.01,
            seed: 0,
            model: ModelConfig::default(),
            allow_off_grid: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("lr {} and weight_decay {} must be finite and non-negative", self.lr, self.weight_decay));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !self.allow_off_grid {
            if !LR_GRID.contains(&self.lr) {
                return bad(format!("lr {} not in {LR_GRID:?}", self.lr));
            }
            if !BATCH_GRID.contains(&self.batch_size) {
                return bad(format!("batch_size {} not in {BATCH_GRID:?}", self.batch_size));
            }
            if self.max_epochs > MAX_EPOCHS {
                return bad(format!("max_epochs {} exceeds {MAX_EPOCHS}", self.max_epochs));
            }
        }
        self.model
            .validate(!self.allow_off_grid)
            .map_err(|e| TrainError::Config(e.to_string()))
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub kind: ModelKind,
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub best_val_accuracy: f64,
    pub checkpoint: Option<PathBuf>,
    pub config: TrainConfig,
}

impl TrainReport {
    /// Line-delimited JSON training log: one event per epoch and a closing summary.
    pub fn log_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let ev = serde_json::json!({
                "event": "epoch",
                "kind": self.kind,
                "epoch": e.epoch,
                "train_loss": e.train_loss,
                "val_accuracy": e.val_accuracy,
                "val_macro_f1": e.val_macro_f1,
            });
            let _ = writeln!(out, "{ev}");
        }
        let done = serde_json::json!({
            "event": "done",
            "kind": self.kind,
            "best_epoch": self.best_epoch,
            "best_val_macro_f1": self.best_val_macro_f1,
        });
        let _ = writeln!(out, "{done}");
        out
    }
}

/// Model-ready train, validation and test inputs.
#[derive(Debug, Clone)]
pub struct PreparedSplits {
    pub train: Prepared,
    pub val: Prepared,
    pub test: Prepared,
}

impl PreparedSplits {
    /// Features are read when `kind` needs them; biases are computed for the PGMT.
    pub fn new(
        splits: &Splits,
        provider: Option<&dyn FeatureProvider>,
        kind: ModelKind,
        lambda: f64,
    ) -> Result<Self, ModelError> {
        let provider = if kind.needs_features() { provider } else { None };
        if kind.needs_features() && provider.is_none() {
            return Err(ModelError::Unprepared("stimulus features"));
        }
        let lambda = kind.needs_bias().then_some(lambda);
        Ok(PreparedSplits {
            train: Prepared::new(&splits.train, provider, lambda)?,
            val: Prepared::new(&splits.val, provider, lambda)?,
            test: Prepared::new(&splits.test, provider, lambda)?,
        })
    }
}

pub fn golds(inputs: &Prepared) -> Vec<PceLabel> {
    inputs.samples.iter().map(|s| PceLabel::ALL[s.label]).collect()
}

/// One network with its optimizer state and shuffle stream.
struct Run<N> {
    net: N,
    opt: AdamWState,
    rng: ChaCha8Rng,
    batch_size: usize,
    best: Option<ParamStore>,
}

impl<N: Network> Run<N> {
    fn new(net: N, cfg: &TrainConfig) -> Self {
        let opt = AdamWState::new(cfg.adamw(), net.store());
        Run {
            net,
            opt,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed),
            batch_size: cfg.batch_size,
            best: None,
        }
    }

    /// One shuffled pass; returns the sample-weighted mean batch loss.
    fn epoch(&mut self, train: &Prepared, epoch: usize) -> Result<f64, TrainError> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(self.batch_size).enumerate() {
            let diverged = |reason: String| TrainError::Diverged {
                epoch,
                batch: b + 1,
                reason,
            };
            let targets: Vec<usize> = batch.iter().map(|&i| train.samples[i].label).collect();
            let grads = {
                let mut g = Graph::new();
                let z = self.net.logits(&mut g, train, batch).map_err(|e| match e {
                    ModelError::Numerics(n @ NumericsError::NonFinite { .. }) => diverged(n.to_string()),
                    e => e.into(),
                })?;
                let loss = g.cross_entropy(z, &targets).map_err(|e| diverged(e.to_string()))?;
                let l = g.value(loss)[0];
                if !l.is_finite() {
                    return Err(diverged(format!("loss {l}")));
                }
                total += l * batch.len() as f64;
                g.backward(loss)?;
                g.param_grads().map_err(|e| diverged(e.to_string()))?
            };
            let store = self.net.store_mut();
            store.zero_grad();
            store.accumulate(&grads);
            self.opt.step(store).map_err(|e| diverged(e.to_string()))?;
        }
        Ok(total / train.len() as f64)
    }

    fn keep_best(&mut self) {
        self.best = Some(self.net.store().clone());
    }

    fn into_best(mut self) -> Result<N, TrainError> {
        if let Some(best) = self.best.take() {
            self.net.store_mut().copy_from(&best)?;
        }
        Ok(self.net)
    }
}

fn score(preds: &[Prediction], val: &Prepared) -> Result<(f64, f64), TrainError> {
    let r = evaluate(preds, &golds(val), Protocol::ThreeClass)?;
    Ok((r.accuracy, r.macro_f1))
}

fn check_inputs(train: &Prepared, val: &Prepared) -> Result<(), TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    Ok(())
}

/// Drives one or two runs epoch by epoch, tracking the best validation macro-F1.
fn drive<F>(
    cfg: &TrainConfig,
    train: &Prepared,
    val: &Prepared,
    mut step: impl FnMut(usize) -> Result<f64, TrainError>,
    mut validate: F,
    mut keep: impl FnMut(),
) -> Result<TrainReport, TrainError>
where
    F: FnMut() -> Result<Vec<Prediction>, TrainError>,
{
    check_inputs(train, val)?;
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(usize, f64, f64)> = None;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = step(epoch)?;
        let (val_accuracy, val_macro_f1) = score(&validate()?, val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_accuracy,
            val_macro_f1,
        });
        if best.map_or(true, |(_, f, _)| val_macro_f1 > f) {
            best = Some((epoch, val_macro_f1, val_accuracy));
            keep();
        }
    }
    let (best_epoch, best_val_macro_f1, best_val_accuracy) = best.unwrap_or((0, 0.0, 0.0));
    Ok(TrainReport {
        kind: cfg.kind,
        epochs,
        best_epoch,
        best_val_macro_f1,
        best_val_accuracy,
        checkpoint: None,
        config: cfg.clone(),
    })
}

/// Trains a single network and returns it with the parameters of its best epoch.
pub fn train_network<N: Network>(
    net: N,
    cfg: &TrainConfig,
    train: &Prepared,
    val: &Prepared,
) -> Result<(N, TrainReport), TrainError> {
    let cell = std::cell::RefCell::new(Run::new(net, cfg));
    let all_val: Vec<usize> = (0..val.len()).collect();
    let report = drive(
        cfg,
        train,
        val,
        |e| cell.borrow_mut().epoch(train, e),
        || Ok(cell.borrow().net.predict(val, &all_val)?),
        || cell.borrow_mut().keep_best(),
    )?;
    Ok((cell.into_inner().into_best()?, report))
}

/// Trains both ensemble components in lockstep on the same splits; each keeps its
/// own optimizer and shuffle stream, and the kept epoch is the one where the
/// averaged predictions score best on validation.
pub fn train_ensemble(
    cfg_lstm: &TrainConfig,
    cfg_transformer: &TrainConfig,
    train: &Prepared,
    val: &Prepared,
) -> Result<(Model, TrainReport), TrainError> {
    if cfg_lstm.max_epochs != cfg_transformer.max_epochs {
        return Err(TrainError::Config("ensemble components need the same max_epochs".into()));
    }
    let lstm = Run::new(PerceptionLstm::new(&cfg_lstm.model.clone().fit_to(train), cfg_lstm.seed)?, cfg_lstm);
    let tr = Run::new(
        MultimodalTransformer::new(&cfg_transformer.model.clone().fit_to(train), false, cfg_transformer.seed)?,
        cfg_transformer,
    );
    let runs = std::cell::RefCell::new((lstm, tr));
    let all_val: Vec<usize> = (0..val.len()).collect();
    let cfg = TrainConfig {
        kind: ModelKind::Ensemble,
        ..cfg_transformer.clone()
    };
    let report = drive(
        &cfg,
        train,
        val,
        |e| {
            let (a, b) = &mut *runs.borrow_mut();
            let la = a.epoch(train, e)?;
            let lb = b.epoch(train, e)?;
            Ok(0.5 * (la + lb))
        },
        || {
            let (a, b) = &*runs.borrow();
            let pa = a.net.predict(val, &all_val)?;
            let pb = b.net.predict(val, &all_val)?;
            Ok(pa.iter().zip(&pb).map(|(x, y)| ensemble_forward(x, y)).collect())
        },
        || {
            let (a, b) = &mut *runs.borrow_mut();
            a.keep_best();
            b.keep_best();
        },
    )?;
    let (a, b) = runs.into_inner();
    let model = Model::Ensemble {
        lstm: a.into_best()?,
        transformer: b.into_best()?,
    };
    Ok((model, report))
}

/// Builds a model of `cfg.kind` sized to the training inputs and trains it.
/// With `out`, the best checkpoint is written there and recorded in the report.
pub fn train(cfg: &TrainConfig, inputs: &PreparedSplits, out: Option<&Path>) -> Result<(Model, TrainReport), TrainError> {
    let cfg = &TrainConfig {
        model: cfg.model.clone().fit_to(&inputs.train),
        ..cfg.clone()
    };
    cfg.validate()?;
    let model_cfg = cfg.model.clone();
    let (model, mut report) = match cfg.kind {
        ModelKind::Lstm => {
            let (net, r) = train_network(PerceptionLstm::new(&model_cfg, cfg.seed)?, cfg, &inputs.train, &inputs.val)?;
            (Model::Lstm(net), r)
        }
        ModelKind::Transformer | ModelKind::Pgmt => {
            let net = MultimodalTransformer::new(&model_cfg, cfg.kind == ModelKind::Pgmt, cfg.seed)?;
            let (net, r) = train_network(net, cfg, &inputs.train, &inputs.val)?;
            (Model::Transformer(net), r)
        }
        ModelKind::Ensemble => train_ensemble(cfg, cfg, &inputs.train, &inputs.val)?,
    };
    if let Some(dir) = out {
        model.save(dir, cfg.seed)?;
        report.checkpoint = Some(dir.to_path_buf());
    }
    Ok((model, report))
}
