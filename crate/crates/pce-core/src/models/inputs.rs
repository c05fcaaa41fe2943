use std::collections::HashMap;

use crate::data::{Dataset, Stimulus};
use crate::encoding::{encode_sequence, exposure_bias, token_aoi_map, TokenAoiMap};
use crate::numerics::Tensor;
use crate::synth::{image_key, text_key, FeatureStore};

use super::ModelError;

/// Frozen per-token text vectors and per-region image vectors.
pub trait FeatureProvider: Sync {
    fn text_dim(&self) -> usize;
    fn image_dim(&self) -> usize;
    /// One row per whitespace token of the caption.
    fn caption_features(&self, stimulus: &Stimulus) -> Result<Tensor, ModelError>;
    /// One row per region, in region order.
    fn region_features(&self, stimulus: &Stimulus) -> Result<Tensor, ModelError>;
}

fn gather(store: &FeatureStore, stimulus: &Stimulus, keys: Vec<String>, dim: usize) -> Result<Tensor, ModelError> {
    let missing = |detail: String| ModelError::MissingFeatures {
        stimulus: stimulus.stimulus_id.clone(),
        detail,
    };
    let mut data = Vec::with_capacity(keys.len() * dim);
    for k in &keys {
        let v = store.get(k).ok_or_else(|| missing(format!("no vector for {k}")))?;
        if v.len() != dim {
            return Err(missing(format!("{k} has dim {} instead of {dim}", v.len())));
        }
        data.extend(v.iter().map(|&x| x as f64));
    }
    Ok(Tensor::new(vec![keys.len(), dim], data)?)
}

impl FeatureProvider for FeatureStore {
    fn text_dim(&self) -> usize {
        self.dim_text
    }

    fn image_dim(&self) -> usize {
        self.dim_image
    }

    fn caption_features(&self, stimulus: &Stimulus) -> Result<Tensor, ModelError> {
        let keys = (0..stimulus.caption_tokens().len()).map(|i| text_key(&stimulus.stimulus_id, i)).collect();
        gather(self, stimulus, keys, self.dim_text)
    }

    fn region_features(&self, stimulus: &Stimulus) -> Result<Tensor, ModelError> {
        let keys = (0..stimulus.regions.len()).map(|j| image_key(&stimulus.stimulus_id, j)).collect();
        gather(self, stimulus, keys, self.dim_image)
    }
}

/// Cached stimulus features in `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusInputs {
    pub stimulus_id: String,
    pub n_words: usize,
    pub n_regions: usize,
    pub text: Vec<f64>,
    pub image: Vec<f64>,
    pub map: TokenAoiMap,
}

impl StimulusInputs {
    /// Transformer input length: classification token, words, regions.
    pub fn n_tokens(&self) -> usize {
        1 + self.n_words + self.n_regions
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleInputs {
    pub aois: Vec<usize>,
    pub participant: usize,
    /// Index into [`Prepared::stimuli`] when features were prepared.
    pub stimulus: usize,
    /// Row-major `n_tokens×n_tokens` amplified transition bias.
    pub bias: Option<Vec<f64>>,
    pub label: usize,
}

/// Model-ready view of a dataset: encoded sequences, feature caches and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub samples: Vec<SampleInputs>,
    pub stimuli: Vec<StimulusInputs>,
    pub n_aois: usize,
    pub n_participants: usize,
    /// λ used for the biases, when computed.
    pub lambda: Option<f64>,
    dims: Option<(usize, usize)>,
}

impl Prepared {
    /// Encodes every sample of `ds`. Features are cached when a provider is given,
    /// and transition biases are computed when `lambda` is given as well.
    pub fn new(ds: &Dataset, provider: Option<&dyn FeatureProvider>, lambda: Option<f64>) -> Result<Self, ModelError> {
        let mut stimuli = Vec::new();
        let mut index = HashMap::new();
        if let Some(p) = provider {
            for (id, st) in ds.stimuli() {
                let text = p.caption_features(st)?;
                let image = p.region_features(st)?;
                index.insert(id.as_str(), stimuli.len());
                stimuli.push(StimulusInputs {
                    stimulus_id: id.clone(),
                    n_words: text.shape()[0],
                    n_regions: image.shape()[0],
                    text: text.data().to_vec(),
                    image: image.data().to_vec(),
                    map: token_aoi_map(st),
                });
            }
        }
        let lambda = lambda.filter(|_| provider.is_some());
        let mut samples = Vec::with_capacity(ds.len());
        for s in ds.samples() {
            let participant = ds
                .participant_vocab()
                .get(&s.participant_id)
                .ok_or_else(|| ModelError::UnknownParticipant(s.participant_id.clone()))?;
            let stimulus = match provider {
                Some(_) => *index
                    .get(s.stimulus_id.as_str())
                    .ok_or_else(|| ModelError::UnknownStimulus(s.stimulus_id.clone()))?,
                None => 0,
            };
            let bias = match lambda {
                Some(l) => {
                    let st = ds
                        .stimulus(&s.stimulus_id)
                        .ok_or_else(|| ModelError::UnknownStimulus(s.stimulus_id.clone()))?;
                    Some(exposure_bias(&s.sequence, st, l)?.data().to_vec())
                }
                None => None,
            };
            samples.push(SampleInputs {
                aois: encode_sequence(&s.sequence, ds.aoi_vocab())?,
                participant,
                stimulus,
                bias,
                label: s.label.code(),
            });
        }
        Ok(Prepared {
            samples,
            stimuli,
            n_aois: ds.aoi_vocab().len(),
            n_participants: ds.participant_vocab().len(),
            lambda,
            dims: provider.map(|p| (p.text_dim(), p.image_dim())),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Text and image feature dimensions, when features were prepared.
    pub fn feature_dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    pub(crate) fn sample(&self, i: usize) -> Result<&SampleInputs, ModelError> {
        self.samples.get(i).ok_or(ModelError::SampleOutOfRange {
            index: i,
            len: self.samples.len(),
        })
    }
}
