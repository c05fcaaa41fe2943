use crate::numerics::nn::{Embedding, Linear, LstmCell};
use crate::numerics::{Graph, Initializer, ParamStore, Tensor, Var};

use super::{ModelConfig, ModelError, ModelKind, Network, Prepared};

/// AOI embedding (⊕ participant embedding) → tanh feed-forward → LSTM → linear head.
#[derive(Debug, Clone)]
pub struct PerceptionLstm {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub aoi_emb: Embedding,
    pub participant_emb: Option<Embedding>,
    pub ff: Linear,
    pub cell: LstmCell,
    pub head: Linear,
}

impl PerceptionLstm {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate(false)?;
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed);
        let c = config;
        let aoi_emb = Embedding::new(&mut store, &mut init, "lstm.aoi_emb", c.n_aois, c.emb_dim)?;
        let participant_emb = if c.use_participant {
            Some(Embedding::new(&mut store, &mut init, "lstm.participant_emb", c.n_participants, c.emb_dim)?)
        } else {
            None
        };
        let in_dim = if c.use_participant { 2 * c.emb_dim } else { c.emb_dim };
        let ff = Linear::new(&mut store, &mut init, "lstm.ff", in_dim, c.ff_dim)?;
        let cell = LstmCell::new(&mut store, &mut init, "lstm.cell", c.ff_dim, c.lstm_hidden)?;
        let head = Linear::new(&mut store, &mut init, "lstm.head", c.lstm_hidden, 3)?;
        Ok(PerceptionLstm {
            config: config.clone(),
            store,
            aoi_emb,
            participant_emb,
            ff,
            cell,
            head,
        })
    }

    /// Cell inputs for parallel lists of AOI and participant indices, one row each.
    pub fn step_inputs<'a>(&'a self, g: &mut Graph<'a>, aois: &[usize], participants: &[usize]) -> Result<Var, ModelError> {
        let mut x = self.aoi_emb.forward(g, &self.store, aois)?;
        if let Some(pe) = &self.participant_emb {
            let p = pe.forward(g, &self.store, participants)?;
            x = g.concat(&[x, p], 1)?;
        }
        let f = self.ff.forward(g, &self.store, x)?;
        Ok(g.tanh(f)?)
    }
}

impl Network for PerceptionLstm {
    fn kind(&self) -> ModelKind {
        ModelKind::Lstm
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

    /// Runs all sequences of the batch together. Rows are sorted by length so the
    /// sequences still running at step `t` are always a prefix of the state.
    fn logits<'a>(&'a self, g: &mut Graph<'a>, inputs: &'a Prepared, batch: &[usize]) -> Result<Var, ModelError> {
        let samples = batch.iter().map(|&i| inputs.sample(i)).collect::<Result<Vec<_>, _>>()?;
        if samples.is_empty() || samples.iter().any(|s| s.aois.is_empty()) {
            return Err(crate::encoding::EncodingError::EmptySequence.into());
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[b].aois.len().cmp(&samples[a].aois.len()));
        let max_len = samples[order[0]].aois.len();
        let active: Vec<usize> = (0..max_len)
            .map(|t| order.iter().take_while(|&&r| samples[r].aois.len() > t).count())
            .collect();

        // time-major rows: step t holds the first active[t] sorted sequences
        let total: usize = active.iter().sum();
        let mut aois = Vec::with_capacity(total);
        let mut parts = Vec::with_capacity(total);
        for (t, &a) in active.iter().enumerate() {
            for &r in &order[..a] {
                aois.push(samples[r].aois[t]);
                parts.push(samples[r].participant);
            }
        }
        let x = self.step_inputs(g, &aois, &parts)?;
        let w = g.param(&self.store, self.cell.w_input);
        let b = g.param(&self.store, self.cell.bias);
        let zx = g.matmul(x, w)?;
        let zx = g.add_row(zx, b)?;

        let zeros = Tensor::zeros(vec![active[0], self.config.lstm_hidden])?;
        let mut h = g.constant(&zeros);
        let mut c = g.constant(&zeros);
        let mut finished = Vec::new();
        let mut offset = 0;
        for &a in &active {
            let rows = g.shape(h).0;
            if a < rows {
                finished.push(g.slice(h, 0, a, rows - a)?);
                h = g.slice(h, 0, 0, a)?;
                c = g.slice(c, 0, 0, a)?;
            }
            let z = g.slice(zx, 0, offset, a)?;
            (h, c) = self.cell.step_projected(g, &self.store, z, h, c)?;
            offset += a;
        }
        finished.push(h);
        finished.reverse();
        let last = if finished.len() == 1 { finished[0] } else { g.concat(&finished, 0)? };
        let sorted = self.head.forward(g, &self.store, last)?;
        let mut position = vec![0; order.len()];
        for (k, &r) in order.iter().enumerate() {
            position[r] = k;
        }
        Ok(g.embedding(sorted, &position)?)
    }
}
