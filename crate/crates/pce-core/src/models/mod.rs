//! Perception-LSTM, content transformer, PGMT and their ensemble.

mod checkpoint;
mod inputs;
mod lstm;
mod prediction;
mod transformer;

pub use checkpoint::{load_model, Model};
pub use inputs::{FeatureProvider, Prepared, SampleInputs, StimulusInputs};
pub use lstm::PerceptionLstm;
pub use prediction::{ensemble_forward, Prediction};
pub use transformer::{MultimodalTransformer, TransformerTrace};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncodingError;
use crate::numerics::{Graph, NumericsError, ParamStore, Var};

pub const FF_GRID: [usize; 4] = [32, 64, 128, 256];
pub const EMB_GRID: [usize; 3] = [8, 16, 32];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid probability vector {0:?}")]
    InvalidPrediction([f64; 3]),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("no features for stimulus {stimulus}: {detail}")]
    MissingFeatures { stimulus: String, detail: String },
    #[error("unknown stimulus {0}")]
    UnknownStimulus(String),
    #[error("unknown participant {0}")]
    UnknownParticipant(String),
    #[error("inputs were prepared without {0}")]
    Unprepared(&'static str),
    #[error("sample index {index} out of range for {len} prepared samples")]
    SampleOutOfRange { index: usize, len: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lstm,
    Transformer,
    Pgmt,
    Ensemble,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Lstm, ModelKind::Transformer, ModelKind::Pgmt, ModelKind::Ensemble];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Lstm => "lstm",
            ModelKind::Transformer => "transformer",
            ModelKind::Pgmt => "pgmt",
            ModelKind::Ensemble => "ensemble",
        }
    }

    /// Whether the model reads stimulus features.
    pub fn needs_features(self) -> bool {
        self != ModelKind::Lstm
    }

    /// Whether the model reads the amplified transition bias.
    pub fn needs_bias(self) -> bool {
        self == ModelKind::Pgmt
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model kind `{s}`")))
    }
}

/// Encoder layers that receive the transition bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasLayers {
    All,
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    /// Size of the AOI and participant embeddings.
    pub emb_dim: usize,
    /// Transition bias weight of the PGMT.
    pub lambda: f64,
    pub model_dim: usize,
    pub text_dim: usize,
    pub image_dim: usize,
    pub lstm_hidden: usize,
    pub use_participant: bool,
    pub positional: bool,
    pub bias_layers: BiasLayers,
    /// Vocabulary sizes; filled from the dataset.
    pub n_aois: usize,
    pub n_participants: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_heads: 6,
            n_layers: 6,
            ff_dim: 256,
            emb_dim: 32,
            lambda: 500.0,
            model_dim: 60,
            text_dim: 768,
            image_dim: 2048,
            lstm_hidden: 64,
            use_participant: true,
            positional: false,
            bias_layers: BiasLayers::All,
            n_aois: 0,
            n_participants: 0,
        }
    }
}

impl ModelConfig {
    /// Structural checks; with `grid_only`, `ff_dim` and `emb_dim` must also come from the search grids.
    pub fn validate(&self, grid_only: bool) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.n_heads == 0 || self.model_dim % self.n_heads != 0 {
            return bad(format!("model_dim {} is not divisible by n_heads {}", self.model_dim, self.n_heads));
        }
        let dims = [
            ("n_layers", self.n_layers),
            ("ff_dim", self.ff_dim),
            ("emb_dim", self.emb_dim),
            ("text_dim", self.text_dim),
            ("image_dim", self.image_dim),
            ("lstm_hidden", self.lstm_hidden),
            ("n_aois", self.n_aois),
            ("n_participants", self.n_participants),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if grid_only && !FF_GRID.contains(&self.ff_dim) {
            return bad(format!("ff_dim {} not in {FF_GRID:?}", self.ff_dim));
        }
        if grid_only && !EMB_GRID.contains(&self.emb_dim) {
            return bad(format!("emb_dim {} not in {EMB_GRID:?}", self.emb_dim));
        }
        Ok(())
    }

    /// Copies vocabulary sizes and feature dimensions from prepared inputs.
    pub fn fit_to(mut self, inputs: &Prepared) -> Self {
        self.n_aois = inputs.n_aois;
        self.n_participants = inputs.n_participants;
        if let Some((t, i)) = inputs.feature_dims() {
            self.text_dim = t;
            self.image_dim = i;
        }
        self
    }
}

/// A single trainable classifier producing one row of three logits per sample.
pub trait Network: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn config(&self) -> &ModelConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;

    /// Logits for `batch` (indices into `inputs`), in batch order.
    fn logits<'a>(&'a self, g: &mut Graph<'a>, inputs: &'a Prepared, batch: &[usize]) -> Result<Var, ModelError>;

    /// Predictions for `indices`, evaluated in chunks.
    fn predict(&self, inputs: &Prepared, indices: &[usize]) -> Result<Vec<Prediction>, ModelError> {
        let mut out = Vec::with_capacity(indices.len());
        for chunk in indices.chunks(256) {
            let mut g = Graph::new();
            let z = self.logits(&mut g, inputs, chunk)?;
            for row in g.value(z).chunks(3) {
                out.push(Prediction::from_logits(row)?);
            }
        }
        Ok(out)
    }
}
