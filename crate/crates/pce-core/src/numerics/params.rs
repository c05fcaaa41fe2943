use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::graph::Gradients;
use crate::numerics::tensor::Tensor;
use crate::numerics::NumericsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of model parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.requires_grad).map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.iter() {
            if let Some(t) = self.tensors.get_mut(id.0) {
                t.accumulate_grad(g);
            }
        }
    }

    /// Writes `manifest.json` and `params.bin` (little-endian f64, manifest order) into `dir`.
    pub fn save(&self, dir: &Path, seed: u64, config: serde_json::Value) -> Result<(), NumericsError> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.len());
        let mut offset = 0;
        let mut bytes = Vec::with_capacity(self.tensors.iter().map(|t| t.len() * 8).sum());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            entries.push(ManifestEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
                trainable: t.requires_grad,
            });
            offset += t.len();
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format: "pce-params-f64le".into(),
            seed,
            config,
            params: entries,
        };
        let mut f = fs::File::create(dir.join("manifest.json"))?;
        f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        f.write_all(b"\n")?;
        fs::write(dir.join("params.bin"), bytes)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(ParamStore, Manifest), NumericsError> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
        let mut raw = Vec::new();
        fs::File::open(dir.join("params.bin"))?.read_to_end(&mut raw)?;
        if raw.len() % 8 != 0 {
            return Err(NumericsError::Checkpoint("params.bin length is not a multiple of 8".into()));
        }
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mut store = ParamStore::new();
        for e in &manifest.params {
            let n: usize = e.shape.iter().product();
            let data = values
                .get(e.offset..e.offset + n)
                .ok_or_else(|| NumericsError::Checkpoint(format!("param {} exceeds params.bin", e.name)))?
                .to_vec();
            let mut t = Tensor::new(e.shape.clone(), data)?;
            t.requires_grad = e.trainable;
            store.add(e.name.clone(), t)?;
        }
        Ok((store, manifest))
    }

    /// Copies values from `other` for every parameter with a matching name and shape.
    pub fn copy_from(&mut self, other: &ParamStore) -> Result<(), NumericsError> {
        for (i, name) in self.names.iter().enumerate() {
            let src = other
                .id(name)
                .map(|id| other.get(id))
                .ok_or_else(|| NumericsError::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != self.tensors[i].shape() {
                return Err(NumericsError::Checkpoint(format!("shape mismatch for {name}")));
            }
            self.tensors[i].data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub format: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub params: Vec<ManifestEntry>,
}

/// Seeded parameter initializer: uniform in `±1/√fan_in`.
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Initializer {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn uniform(&mut self, shape: Vec<usize>, fan_in: usize) -> Result<Tensor, NumericsError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        Ok(Tensor::new(shape, data)?.with_grad())
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: f64) -> Result<Tensor, NumericsError> {
        let n: usize = shape.iter().product();
        Ok(Tensor::new(shape, vec![value; n])?.with_grad())
    }
}
