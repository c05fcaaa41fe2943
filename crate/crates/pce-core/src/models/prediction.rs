use serde::{Deserialize, Serialize};

use crate::data::PceLabel;

use super::ModelError;

/// A 3-class probability distribution ordered by [`PceLabel`] code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: [f64; 3],
}

impl Prediction {
    pub fn new(probs: [f64; 3]) -> Result<Self, ModelError> {
        let sum: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(ModelError::InvalidPrediction(probs));
        }
        Ok(Prediction { probs })
    }

    /// Softmax of three logits.
    pub fn from_logits(logits: &[f64]) -> Result<Self, ModelError> {
        let [a, b, c] = <[f64; 3]>::try_from(logits).map_err(|_| ModelError::InvalidPrediction([f64::NAN; 3]))?;
        let m = a.max(b).max(c);
        let e = [(a - m).exp(), (b - m).exp(), (c - m).exp()];
        let s = e[0] + e[1] + e[2];
        Prediction::new([e[0] / s, e[1] / s, e[2] / s])
    }

    /// Probability one on `label`.
    pub fn certain(label: PceLabel) -> Self {
        let mut probs = [0.0; 3];
        probs[label.code()] = 1.0;
        Prediction { probs }
    }

    /// Most probable class; ties go to the lowest code.
    pub fn label(&self) -> PceLabel {
        let mut best = 0;
        for k in 1..3 {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        PceLabel::ALL[best]
    }

    /// More probable of Yes and No; ties go to Yes.
    pub fn binary_label(&self) -> PceLabel {
        if self.probs[1] > self.probs[0] {
            PceLabel::No
        } else {
            PceLabel::Yes
        }
    }
}

/// Elementwise mean of two distributions.
pub fn ensemble_forward(a: &Prediction, b: &Prediction) -> Prediction {
    let mut probs = [0.0; 3];
    for k in 0..3 {
        probs[k] = 0.5 * (a.probs[k] + b.probs[k]);
    }
    Prediction { probs }
}
