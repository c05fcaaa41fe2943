use std::collections::HashMap;

use crate::numerics::nn::{sinusoidal_positions, Embedding, EncoderLayer, Linear};
use crate::numerics::{Graph, Initializer, ParamId, ParamStore, Tensor, Var};

use super::{BiasLayers, ModelConfig, ModelError, ModelKind, Network, Prepared};

/// Encoder over `[cls] ++ projected caption tokens ++ projected regions`; the
/// classification-token output (⊕ participant embedding) feeds a linear head.
/// With `guided` set, every sample's amplified transition bias is added to the
/// attention logits (the PGMT); the parameters are the same either way.
#[derive(Debug, Clone)]
pub struct MultimodalTransformer {
    pub config: ModelConfig,
    pub guided: bool,
    pub store: ParamStore,
    pub cls: ParamId,
    pub text_proj: Linear,
    pub image_proj: Linear,
    pub layers: Vec<EncoderLayer>,
    pub participant_emb: Option<Embedding>,
    pub head: Linear,
}

/// Intermediate nodes of one transformer forward pass.
#[derive(Debug, Clone)]
pub struct TransformerTrace {
    pub logits: Var,
    /// One fused attention node per encoder layer.
    pub attention: Vec<Var>,
    /// Token count of each sample, in batch order.
    pub lengths: Vec<usize>,
}

impl MultimodalTransformer {
    pub fn new(config: &ModelConfig, guided: bool, seed: u64) -> Result<Self, ModelError> {
        config.validate(false)?;
        let c = config;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let cls = store.add("transformer.cls", init.uniform(vec![1, c.model_dim], c.model_dim)?)?;
        let text_proj = Linear::new(&mut store, &mut init, "transformer.text_proj", c.text_dim, c.model_dim)?;
        let image_proj = Linear::new(&mut store, &mut init, "transformer.image_proj", c.image_dim, c.model_dim)?;
        let layers = (0..c.n_layers)
            .map(|l| {
                EncoderLayer::new(&mut store, &mut init, &format!("transformer.layer{l}"), c.model_dim, c.n_heads, c.ff_dim)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let participant_emb = if c.use_participant {
            Some(Embedding::new(&mut store, &mut init, "transformer.participant_emb", c.n_participants, c.emb_dim)?)
        } else {
            None
        };
        let head_in = c.model_dim + if c.use_participant { c.emb_dim } else { 0 };
        let head = Linear::new(&mut store, &mut init, "transformer.head", head_in, 3)?;
        Ok(MultimodalTransformer {
            config: config.clone(),
            guided,
            store,
            cls,
            text_proj,
            image_proj,
            layers,
            participant_emb,
            head,
        })
    }

    /// Forward pass that also exposes the attention nodes.
    pub fn trace<'a>(&'a self, g: &mut Graph<'a>, inputs: &'a Prepared, batch: &[usize]) -> Result<TransformerTrace, ModelError> {
        let samples = batch.iter().map(|&i| inputs.sample(i)).collect::<Result<Vec<_>, _>>()?;
        if inputs.stimuli.is_empty() {
            return Err(ModelError::Unprepared("stimulus features"));
        }
        if self.guided && inputs.lambda != Some(self.config.lambda) {
            return Err(ModelError::Unprepared("transition biases for this lambda"));
        }
        let (dt, di) = (self.config.text_dim, self.config.image_dim);
        if inputs.feature_dims() != Some((dt, di)) {
            return Err(ModelError::Config(format!(
                "feature dims {:?} do not match the model's ({dt}, {di})",
                inputs.feature_dims()
            )));
        }

        // project each distinct stimulus once
        let mut uniq: Vec<usize> = Vec::new();
        let mut slot: HashMap<usize, usize> = HashMap::new();
        for s in &samples {
            slot.entry(s.stimulus).or_insert_with(|| {
                uniq.push(s.stimulus);
                uniq.len() - 1
            });
        }
        let (mut text, mut image) = (Vec::new(), Vec::new());
        let (mut text_off, mut image_off) = (Vec::with_capacity(uniq.len()), Vec::with_capacity(uniq.len()));
        for &u in &uniq {
            let st = &inputs.stimuli[u];
            text_off.push(text.len() / dt);
            image_off.push(image.len() / di);
            text.extend_from_slice(&st.text);
            image.extend_from_slice(&st.image);
        }
        let (n_text, n_image) = (text.len() / dt, image.len() / di);
        let mut pool = vec![g.param(&self.store, self.cls)];
        if n_text > 0 {
            let x = g.constant(&Tensor::new(vec![n_text, dt], text)?);
            pool.push(self.text_proj.forward(g, &self.store, x)?);
        }
        if n_image > 0 {
            let x = g.constant(&Tensor::new(vec![n_image, di], image)?);
            pool.push(self.image_proj.forward(g, &self.store, x)?);
        }
        let pool = g.concat(&pool, 0)?;

        let mut rows = Vec::new();
        let mut lengths = Vec::with_capacity(samples.len());
        let mut cls_rows = Vec::with_capacity(samples.len());
        let mut bias = Vec::new();
        for s in &samples {
            let st = &inputs.stimuli[s.stimulus];
            let k = slot[&s.stimulus];
            cls_rows.push(rows.len());
            rows.push(0);
            rows.extend((0..st.n_words).map(|w| 1 + text_off[k] + w));
            rows.extend((0..st.n_regions).map(|r| 1 + n_text + image_off[k] + r));
            let n = st.n_tokens();
            lengths.push(n);
            if self.guided {
                let b = s.bias.as_ref().ok_or(ModelError::Unprepared("transition biases"))?;
                if b.len() != n * n {
                    return Err(ModelError::Config(format!("bias of length {} for {n} tokens", b.len())));
                }
                bias.extend_from_slice(b);
            }
        }
        let mut x = g.embedding(pool, &rows)?;
        if self.config.positional {
            let longest = lengths.iter().copied().max().unwrap_or(1);
            let table = sinusoidal_positions(longest, self.config.model_dim)?;
            let mut pos = Vec::with_capacity(rows.len() * self.config.model_dim);
            for &n in &lengths {
                pos.extend_from_slice(&table.data()[..n * self.config.model_dim]);
            }
            let p = g.constant(&Tensor::new(vec![rows.len(), self.config.model_dim], pos)?);
            x = g.add(x, p)?;
        }
        let bias = if self.guided {
            Some(g.constant(&Tensor::new(vec![1, bias.len()], bias)?))
        } else {
            None
        };
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let b = match self.config.bias_layers {
                BiasLayers::All => bias,
                BiasLayers::First => bias.filter(|_| l == 0),
            };
            let (h, att) = layer.forward_batch(g, &self.store, x, &lengths, b)?;
            x = h;
            attention.push(att);
        }
        let mut out = g.embedding(x, &cls_rows)?;
        if let Some(pe) = &self.participant_emb {
            let parts: Vec<usize> = samples.iter().map(|s| s.participant).collect();
            let p = pe.forward(g, &self.store, &parts)?;
            out = g.concat(&[out, p], 1)?;
        }
        let logits = self.head.forward(g, &self.store, out)?;
        Ok(TransformerTrace {
            logits,
            attention,
            lengths,
        })
    }
}

impl Network for MultimodalTransformer {
    fn kind(&self) -> ModelKind {
        if self.guided {
            ModelKind::Pgmt
        } else {
            ModelKind::Transformer
        }
    }

    fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn logits<'a>(&'a self, g: &mut Graph<'a>, inputs: &'a Prepared, batch: &[usize]) -> Result<Var, ModelError> {
        Ok(self.trace(g, inputs, batch)?.logits)
    }
}
