use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::numerics::ParamStore;

use super::{
    ensemble_forward, ModelConfig, ModelError, ModelKind, MultimodalTransformer, Network, PerceptionLstm, Prediction,
    Prepared,
};

const ENSEMBLE_FILE: &str = "ensemble.json";

/// Any of the four classifiers.
#[derive(Debug, Clone)]
pub enum Model {
    Lstm(PerceptionLstm),
    /// Content transformer, or the PGMT when `guided`.
    Transformer(MultimodalTransformer),
    Ensemble {
        lstm: PerceptionLstm,
        transformer: MultimodalTransformer,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    model: ModelConfig,
}

impl Model {
    /// Freshly initialised model. Ensemble components share `config`.
    pub fn new(kind: ModelKind, config: &ModelConfig, seed: u64) -> Result<Model, ModelError> {
        Ok(match kind {
            ModelKind::Lstm => Model::Lstm(PerceptionLstm::new(config, seed)?),
            ModelKind::Transformer => Model::Transformer(MultimodalTransformer::new(config, false, seed)?),
            ModelKind::Pgmt => Model::Transformer(MultimodalTransformer::new(config, true, seed)?),
            ModelKind::Ensemble => Model::Ensemble {
                lstm: PerceptionLstm::new(config, seed)?,
                transformer: MultimodalTransformer::new(config, false, seed)?,
            },
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lstm(m) => m.kind(),
            Model::Transformer(m) => m.kind(),
            Model::Ensemble { .. } => ModelKind::Ensemble,
        }
    }

    /// Configuration of the model, or of the transformer component for an ensemble.
    pub fn config(&self) -> &ModelConfig {
        match self {
            Model::Lstm(m) => &m.config,
            Model::Transformer(m) | Model::Ensemble { transformer: m, .. } => &m.config,
        }
    }

    pub fn trainable_params(&self) -> usize {
        match self {
            Model::Lstm(m) => m.store.trainable_count(),
            Model::Transformer(m) => m.store.trainable_count(),
            Model::Ensemble { lstm, transformer } => lstm.store.trainable_count() + transformer.store.trainable_count(),
        }
    }

    pub fn predict(&self, inputs: &Prepared, indices: &[usize]) -> Result<Vec<Prediction>, ModelError> {
        match self {
            Model::Lstm(m) => m.predict(inputs, indices),
            Model::Transformer(m) => m.predict(inputs, indices),
            Model::Ensemble { lstm, transformer } => {
                let a = lstm.predict(inputs, indices)?;
                let b = transformer.predict(inputs, indices)?;
                Ok(a.iter().zip(&b).map(|(a, b)| ensemble_forward(a, b)).collect())
            }
        }
    }

    /// Predictions for every prepared sample.
    pub fn predict_all(&self, inputs: &Prepared) -> Result<Vec<Prediction>, ModelError> {
        let all: Vec<usize> = (0..inputs.len()).collect();
        self.predict(inputs, &all)
    }

    /// Writes the parameters with the model kind and config in the manifest.
    /// Ensembles write one checkpoint per component under `lstm/` and `transformer/`.
    pub fn save(&self, dir: &Path, seed: u64) -> Result<(), ModelError> {
        let save = |store: &ParamStore, dir: &Path, kind: ModelKind, cfg: &ModelConfig| -> Result<(), ModelError> {
            let header = serde_json::to_value(Header {
                kind,
                model: cfg.clone(),
            })
            .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            Ok(store.save(dir, seed, header)?)
        };
        match self {
            Model::Lstm(m) => save(&m.store, dir, m.kind(), &m.config),
            Model::Transformer(m) => save(&m.store, dir, m.kind(), &m.config),
            Model::Ensemble { lstm, transformer } => {
                save(&lstm.store, &dir.join("lstm"), lstm.kind(), &lstm.config)?;
                save(&transformer.store, &dir.join("transformer"), transformer.kind(), &transformer.config)?;
                let marker = serde_json::json!({ "kind": "ensemble", "seed": seed, "components": ["lstm", "transformer"] });
                let text = serde_json::to_string_pretty(&marker).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
                fs::write(dir.join(ENSEMBLE_FILE), text + "\n").map_err(|e| ModelError::Checkpoint(e.to_string()))
            }
        }
    }
}

fn load_single(dir: &Path) -> Result<(Model, u64), ModelError> {
    let (store, manifest) = ParamStore::load(dir)?;
    let header: Header = serde_json::from_value(manifest.config).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    let mut model = Model::new(header.kind, &header.model, manifest.seed)?;
    match &mut model {
        Model::Lstm(m) => m.store.copy_from(&store)?,
        Model::Transformer(m) => m.store.copy_from(&store)?,
        Model::Ensemble { .. } => return Err(ModelError::Checkpoint("nested ensemble".into())),
    }
    if model.trainable_params() != store.trainable_count() {
        return Err(ModelError::Checkpoint("checkpoint has extra parameters".into()));
    }
    Ok((model, manifest.seed))
}

/// Reads a checkpoint written by [`Model::save`], returning the model and its seed.
pub fn load_model(dir: &Path) -> Result<(Model, u64), ModelError> {
    if !dir.join(ENSEMBLE_FILE).exists() {
        return load_single(dir);
    }
    let (lstm, seed) = load_single(&dir.join("lstm"))?;
    let (transformer, _) = load_single(&dir.join("transformer"))?;
    match (lstm, transformer) {
        (Model::Lstm(lstm), Model::Transformer(transformer)) => Ok((Model::Ensemble { lstm, transformer }, seed)),
        _ => Err(ModelError::Checkpoint("ensemble components have unexpected kinds".into())),
    }
}
