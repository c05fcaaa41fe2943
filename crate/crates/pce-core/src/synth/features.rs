use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{stream, GeneratorConfig, SynthError};
use crate::data::{Dataset, Stimulus};

pub const FEATURES_BIN: &str = "features.bin";
pub const FEATURES_INDEX: &str = "features.json";

/// Relative size of the per-key noise next to the unit concept direction.
const NOISE_SCALE: f64 = 0.6;
/// Size of the mentioned/unmentioned direction on central regions at full signal.
const MENTION_SCALE: f64 = 0.8;

/// Frozen per-token and per-region vectors, keyed `"{stimulus}/txt/{word}"` and
/// `"{stimulus}/vis/{region}"`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim_text: usize,
    pub dim_image: usize,
    vectors: BTreeMap<String, Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct IndexEntry {
    offset: usize,
    dim: usize,
}

pub fn text_key(stimulus_id: &str, word: usize) -> String {
    format!("{stimulus_id}/txt/{word}")
}

pub fn image_key(stimulus_id: &str, region: usize) -> String {
    format!("{stimulus_id}/vis/{region}")
}

impl FeatureStore {
    pub fn new(dim_text: usize, dim_image: usize) -> Self {
        FeatureStore {
            dim_text,
            dim_image,
            vectors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, key: String, v: Vec<f32>) {
        self.vectors.insert(key, v);
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Writes the little-endian `f32` blob and its JSON index into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir).map_err(|source| SynthError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let mut blob = Vec::with_capacity(self.vectors.values().map(|v| v.len() * 4).sum());
        let mut index = BTreeMap::new();
        let mut offset = 0;
        for (k, v) in &self.vectors {
            index.insert(k.clone(), IndexEntry { offset, dim: v.len() });
            for x in v {
                blob.extend_from_slice(&x.to_le_bytes());
            }
            offset += v.len();
        }
        let bin = dir.join(FEATURES_BIN);
        fs::write(&bin, blob).map_err(|source| SynthError::Io { path: bin, source })?;
        let json = serde_json::to_string_pretty(&index).map_err(|e| SynthError::Features(e.to_string()))?;
        let idx = dir.join(FEATURES_INDEX);
        fs::write(&idx, json + "\n").map_err(|source| SynthError::Io { path: idx, source })
    }
}

pub fn load_features(dir: &Path) -> Result<FeatureStore, SynthError> {
    let read = |name: &str| {
        let p = dir.join(name);
        fs::read(&p).map_err(|source| SynthError::Io { path: p, source })
    };
    let index: BTreeMap<String, IndexEntry> =
        serde_json::from_slice(&read(FEATURES_INDEX)?).map_err(|e| SynthError::Features(e.to_string()))?;
    let blob = read(FEATURES_BIN)?;
    let (mut dim_text, mut dim_image) = (0, 0);
    let mut vectors = BTreeMap::new();
    for (k, e) in index {
        let (start, end) = (e.offset * 4, (e.offset + e.dim) * 4);
        if end > blob.len() {
            return Err(SynthError::Features(format!("entry {k} overruns {FEATURES_BIN}")));
        }
        let v: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let dim = if k.contains("/txt/") { &mut dim_text } else { &mut dim_image };
        if *dim != 0 && *dim != e.dim {
            return Err(SynthError::Features(format!("entry {k} has dim {} instead of {dim}", e.dim)));
        }
        *dim = e.dim;
        vectors.insert(k, v);
    }
    Ok(FeatureStore {
        dim_text,
        dim_image,
        vectors,
    })
}

fn gaussian(seed: u64, purpose: &str, dim: usize) -> Vec<f64> {
    let mut rng = stream(seed, purpose, 0);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn to_unit_f32(v: Vec<f64>) -> Vec<f32> {
    let v: Vec<f32> = unit(v).into_iter().map(|x| x as f32).collect();
    // renormalise after rounding to single precision
    let n = v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x as f64 / n) as f32).collect()
}

/// Unit vector for a concept over the dimensions shared by both modalities.
fn concept(seed: u64, label: &str, shared: usize) -> Vec<f64> {
    unit(gaussian(seed, &format!("concept:{label}"), shared))
}

fn noisy(seed: u64, base: &[f64], key: &str, dim: usize) -> Vec<f64> {
    let noise = unit(gaussian(seed, &format!("noise:{key}"), dim));
    (0..dim)
        .map(|i| base.get(i).copied().unwrap_or(0.0) + NOISE_SCALE * noise[i])
        .collect()
}

fn stimulus_features(cfg: &GeneratorConfig, st: &Stimulus, seed: u64, store: &mut FeatureStore) {
    let shared = cfg.feature_dim_text.min(cfg.feature_dim_image);
    let s = cfg.signal_strength;
    let spans = &st.caption_spans;
    for (i, tok) in st.caption_tokens().iter().enumerate() {
        let label = spans
            .iter()
            .find(|sp| tok.start < sp.end && sp.start < tok.end)
            .map(|sp| sp.aoi.label().to_string())
            .unwrap_or_else(|| format!("word:{}", tok.text.to_lowercase()));
        let key = text_key(&st.stimulus_id, i);
        let v = noisy(seed, &concept(seed, &label, shared), &key, cfg.feature_dim_text);
        store.insert(key, to_unit_f32(v));
    }
    let central = st.central_regions();
    let mentioned = unit(gaussian(seed, "direction:mentioned", cfg.feature_dim_image));
    let unmentioned = unit(gaussian(seed, "direction:unmentioned", cfg.feature_dim_image));
    for (j, r) in st.regions.iter().enumerate() {
        let key = image_key(&st.stimulus_id, j);
        let mut v = noisy(seed, &concept(seed, r.aoi.label(), shared), &key, cfg.feature_dim_image);
        if central.contains(&j) {
            let dir = if st.is_mentioned(j) { &mentioned } else { &unmentioned };
            v.iter_mut().zip(dir).for_each(|(x, d)| *x += s * MENTION_SCALE * d);
        }
        store.insert(key, to_unit_f32(v));
    }
}

/// Unit-norm vectors for every caption word and region of the dataset's stimuli.
pub fn generate_features(cfg: &GeneratorConfig, ds: &Dataset, seed: u64) -> Result<FeatureStore, SynthError> {
    if cfg.feature_dim_text == 0 || cfg.feature_dim_image == 0 {
        return Err(SynthError::Config("feature dimensions must be positive".into()));
    }
    let mut store = FeatureStore::new(cfg.feature_dim_text, cfg.feature_dim_image);
    for st in ds.stimuli().values() {
        stimulus_features(cfg, st, seed, &mut store);
    }
    Ok(store)
}
