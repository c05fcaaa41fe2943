use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pce_core::evaluation::Protocol;
use pce_core::llm::{HttpConfig, Setup};
use pce_core::models::ModelKind;
use pce_core::synth::GeneratorConfig;
use pce_core::training::{Grids, TrainConfig};

use crate::{usage, CliError};

/// Every setting of a run. Built from defaults, then the `--config` file, then flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; copied into the generator, the split and training.
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub split: [f64; 3],
    pub train: TrainConfig,
    pub grids: Grids,
    pub protocol: Protocol,
    pub setup: Setup,
    pub llm: HttpConfig,
    pub parallelism: usize,
    /// Input dataset directory.
    pub data: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            generator: GeneratorConfig::default(),
            split: [0.8, 0.1, 0.1],
            train: TrainConfig::default(),
            grids: Grids::default(),
            protocol: Protocol::ThreeClass,
            setup: Setup::ZeroShot,
            llm: HttpConfig::default(),
            parallelism: 4,
            data: None,
        }
    }
}

/// Values given on the command line; `None` leaves the config untouched.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<ModelKind>,
    pub protocol: Option<Protocol>,
    pub lambda: Option<f64>,
    pub setup: Option<Setup>,
    pub data: Option<PathBuf>,
    pub max_epochs: Option<usize>,
    pub signal: Option<f64>,
    pub samples: Option<usize>,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<RunConfig, CliError> {
        let mut cfg = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
                serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = o.model {
            cfg.train.kind = v;
        }
        if let Some(v) = o.protocol {
            cfg.protocol = v;
        }
        if let Some(v) = o.lambda {
            cfg.train.model.lambda = v;
        }
        if let Some(v) = o.setup {
            cfg.setup = v;
        }
        if let Some(v) = &o.data {
            cfg.data = Some(v.clone());
        }
        if let Some(v) = o.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = o.signal {
            cfg.generator.signal_strength = v;
        }
        if let Some(v) = o.samples {
            cfg.generator.n_samples = v;
        }
        cfg.generator.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.generator.validate().map_err(|e| usage(e.to_string()))?;
        // vocabulary sizes come from the data later; stand-ins let the rest be checked now
        let mut probe = self.train.clone();
        probe.model.n_aois = 1;
        probe.model.n_participants = 1;
        probe.validate().map_err(|e| usage(e.to_string()))?;
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(usage(format!("split fractions {:?} must be non-negative and sum to 1", self.split)));
        }
        if self.parallelism == 0 {
            return Err(usage("parallelism must be positive"));
        }
        if let Some(d) = &self.data {
            if !d.is_dir() {
                return Err(usage(format!("data directory {} does not exist", d.display())));
            }
        }
        Ok(())
    }

    pub fn split_fractions(&self) -> (f64, f64, f64) {
        (self.split[0], self.split[1], self.split[2])
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data.as_deref().ok_or_else(|| usage("--data <dir> is required"))
    }

    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
