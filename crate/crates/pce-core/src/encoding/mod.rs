//! Model inputs derived from fixation sequences: AOI index sequences, transition
//! matrices, the symmetric amplification and its projection onto token positions.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{AoiId, FixationSequence, Stimulus, Vocab};
use crate::numerics::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("empty fixation sequence")]
    EmptySequence,
    #[error("AOI `{0}` is not in the vocabulary")]
    UnknownAoi(String),
    #[error("index {0} is not in the vocabulary")]
    UnknownIndex(usize),
    #[error("lambda must be non-negative and finite, got {0}")]
    InvalidLambda(f64),
    #[error("token AOI `{0}` has no row in the matrix")]
    UnmappedAoi(String),
}

pub fn encode_sequence(seq: &FixationSequence, vocab: &Vocab) -> Result<Vec<usize>, EncodingError> {
    if seq.is_empty() {
        return Err(EncodingError::EmptySequence);
    }
    seq.aois()
        .map(|a| vocab.get(a.as_str()).ok_or_else(|| EncodingError::UnknownAoi(a.to_string())))
        .collect()
}

pub fn decode_sequence(indices: &[usize], vocab: &Vocab) -> Result<Vec<AoiId>, EncodingError> {
    indices
        .iter()
        .map(|&i| {
            let s = vocab.symbol(i).ok_or(EncodingError::UnknownIndex(i))?;
            AoiId::parse(s).map_err(|_| EncodingError::UnknownAoi(s.to_string()))
        })
        .collect()
}

/// Square AOI×AOI successor matrix over a local AOI order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    order: Vec<AoiId>,
    index: HashMap<AoiId, usize>,
    /// Row-major; `m[a·n + b]` counts fixations on `b` directly after `a`.
    m: Vec<u32>,
}

impl TransitionMatrix {
    fn from_sequence(seq: &FixationSequence, counted: bool) -> Self {
        let mut order = Vec::new();
        let mut index = HashMap::new();
        for a in seq.aois() {
            if !index.contains_key(a) {
                index.insert(a.clone(), order.len());
                order.push(a.clone());
            }
        }
        let n = order.len();
        let mut m = vec![0u32; n * n];
        let fx = seq.fixations();
        for w in fx.windows(2) {
            let cell = &mut m[index[&w[0].aoi] * n + index[&w[1].aoi]];
            *cell = if counted { *cell + 1 } else { 1 };
        }
        TransitionMatrix { order, index, m }
    }

    /// AOIs in row/column order.
    pub fn order(&self) -> &[AoiId] {
        &self.order
    }

    pub fn size(&self) -> usize {
        self.order.len()
    }

    pub fn index_of(&self, aoi: &AoiId) -> Option<usize> {
        self.index.get(aoi).copied()
    }

    pub fn get(&self, from: usize, to: usize) -> u32 {
        self.m[from * self.size() + to]
    }

    pub fn entries(&self) -> &[u32] {
        &self.m
    }

    pub fn nonzero_count(&self) -> usize {
        self.m.iter().filter(|&&v| v != 0).count()
    }

    /// Appends AOIs not yet present as all-zero rows and columns.
    pub fn extend_order<'a>(&mut self, aois: impl IntoIterator<Item = &'a AoiId>) {
        let old = self.size();
        for a in aois {
            if !self.index.contains_key(a) {
                self.index.insert(a.clone(), self.order.len());
                self.order.push(a.clone());
            }
        }
        let n = self.size();
        if n == old {
            return;
        }
        let mut m = vec![0u32; n * n];
        for r in 0..old {
            m[r * n..r * n + old].copy_from_slice(&self.m[r * old..(r + 1) * old]);
        }
        self.m = m;
    }

    pub fn to_csv(&self) -> String {
        let vals: Vec<f64> = self.m.iter().map(|&v| v as f64).collect();
        matrix_csv(&self.order, &vals)
    }
}

/// Binary transitions: `m[a][b] = 1` iff `b` directly follows `a` somewhere in the sequence.
/// Rows and columns follow first appearance in the sequence.
pub fn transition_matrix(seq: &FixationSequence) -> TransitionMatrix {
    TransitionMatrix::from_sequence(seq, false)
}

/// Like [`transition_matrix`] but each cell counts the occurrences.
pub fn transition_matrix_counted(seq: &FixationSequence) -> TransitionMatrix {
    TransitionMatrix::from_sequence(seq, true)
}

/// Real-valued square matrix over a local AOI order.
#[derive(Debug, Clone, PartialEq)]
pub struct AoiMatrix {
    pub order: Vec<AoiId>,
    pub values: Vec<f64>,
}

impl AoiMatrix {
    pub fn size(&self) -> usize {
        self.order.len()
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.values[from * self.size() + to]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.size().max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(&self.order, &self.values)
    }
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

fn matrix_csv(order: &[AoiId], values: &[f64]) -> String {
    let n = order.len();
    let mut out = String::from("aoi");
    for a in order {
        let _ = write!(out, ",{a}");
    }
    out.push('\n');
    for (r, a) in order.iter().enumerate() {
        out.push_str(a.as_str());
        for v in &values[r * n..(r + 1) * n] {
            let _ = write!(out, ",{}", fmt_value(*v));
        }
        out.push('\n');
    }
    out
}

/// `λ(M + Mᵀ)`.
pub fn amplify(t: &TransitionMatrix, lambda: f64) -> Result<AoiMatrix, EncodingError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(EncodingError::InvalidLambda(lambda));
    }
    let n = t.size();
    let mut values = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            values[a * n + b] = lambda * (t.get(a, b) as f64 + t.get(b, a) as f64);
        }
    }
    Ok(AoiMatrix {
        order: t.order().to_vec(),
        values,
    })
}

/// AOI carried by each transformer input position: `[cls] ++ caption words ++ regions`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenAoiMap {
    pub positions: Vec<Option<AoiId>>,
}

impl TokenAoiMap {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Caption words take the text AOI of the first span they overlap; regions take
/// their visual AOI; the classification token and uncovered words map to none.
pub fn token_aoi_map(stimulus: &Stimulus) -> TokenAoiMap {
    let mut positions = vec![None];
    for tok in stimulus.caption_tokens() {
        let span = stimulus
            .caption_spans
            .iter()
            .find(|s| tok.start < s.end && s.start < tok.end);
        positions.push(span.map(|s| s.aoi.clone()));
    }
    positions.extend(stimulus.regions.iter().map(|r| Some(r.aoi.clone())));
    TokenAoiMap { positions }
}

/// `bias[i][j] = amplified[aoi(i)][aoi(j)]` when both positions carry an AOI, else 0.
/// Two distinct positions of the same AOI (words of one caption span) get 0.
pub fn token_bias(amplified: &AoiMatrix, map: &TokenAoiMap) -> Result<Tensor, EncodingError> {
    let lookup: HashMap<&AoiId, usize> = amplified.order.iter().enumerate().map(|(i, a)| (a, i)).collect();
    let idx: Vec<Option<usize>> = map
        .positions
        .iter()
        .map(|p| match p {
            None => Ok(None),
            Some(a) => lookup
                .get(a)
                .copied()
                .map(Some)
                .ok_or_else(|| EncodingError::UnmappedAoi(a.to_string())),
        })
        .collect::<Result<_, _>>()?;
    let n = idx.len();
    let mut data = vec![0.0; n * n];
    for (i, a) in idx.iter().enumerate() {
        let Some(a) = a else { continue };
        for (j, b) in idx.iter().enumerate() {
            match b {
                Some(b) if i == j || a != b => data[i * n + j] = amplified.get(*a, *b),
                _ => {}
            }
        }
    }
    Tensor::new(vec![n, n], data).map_err(|_| EncodingError::EmptySequence)
}

/// Token bias for a stimulus exposure, with the stimulus AOIs the participant never
/// fixated added as zero rows so every token position resolves.
pub fn exposure_bias(seq: &FixationSequence, stimulus: &Stimulus, lambda: f64) -> Result<Tensor, EncodingError> {
    let map = token_aoi_map(stimulus);
    let mut t = transition_matrix(seq);
    t.extend_order(map.positions.iter().flatten());
    token_bias(&amplify(&t, lambda)?, &map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Fixation;

    fn seq(aois: &[&str]) -> FixationSequence {
        let fx = aois
            .iter()
            .enumerate()
            .map(|(i, a)| Fixation {
                index: i as u32 + 1,
                aoi: AoiId::parse(a).unwrap(),
                x: 1.0,
                y: 1.0,
                duration_ms: 100.0,
            })
            .collect();
        FixationSequence::new("p", "s", fx).unwrap()
    }

    #[test]
    fn counted_variant_counts_repeats() {
        let s = seq(&["vis_a", "txt_a", "vis_a", "txt_a"]);
        assert_eq!(transition_matrix(&s).get(0, 1), 1);
        assert_eq!(transition_matrix_counted(&s).get(0, 1), 2);
    }

    #[test]
    fn self_transitions_land_on_the_diagonal() {
        let t = transition_matrix(&seq(&["vis_a", "vis_a", "off"]));
        assert_eq!(t.entries(), &[1, 1, 0, 0]);
    }

    #[test]
    fn extending_keeps_existing_cells() {
        let mut t = transition_matrix(&seq(&["vis_a", "txt_a"]));
        let extra = [AoiId::parse("vis_b").unwrap(), AoiId::parse("vis_a").unwrap()];
        t.extend_order(extra.iter());
        assert_eq!(t.size(), 3);
        assert_eq!(t.get(0, 1), 1);
        assert_eq!(t.nonzero_count(), 1);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        let t = transition_matrix(&seq(&["vis_a"]));
        assert_eq!(amplify(&t, -1.0).unwrap_err(), EncodingError::InvalidLambda(-1.0));
    }

    #[test]
    fn csv_dump_has_symbol_headers() {
        let t = transition_matrix(&seq(&["vis_a", "txt_a"]));
        assert_eq!(t.to_csv(), "aoi,vis_a,txt_a\nvis_a,0,1\ntxt_a,0,0\n");
    }
}
