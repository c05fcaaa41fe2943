//! Accuracy and macro-F1 under the 3-class and 2-class protocols, the
//! most-frequent-class baseline and alignment-signal ablation tables.

mod ablation;

pub use ablation::{ablation_table, AblationRow, AblationTable, AblationVariant, CellMetrics, NAIVE_VARIANT, TABLE_VARIANTS};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::PceLabel;
use crate::models::Prediction;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{preds} predictions for {golds} gold labels")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("no samples left to evaluate under the {0} protocol")]
    Empty(Protocol),
    #[error("unknown protocol `{0}` (expected 3class or 2class)")]
    UnknownProtocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "3class")]
    ThreeClass,
    /// Samples whose gold label is Unclear are dropped.
    #[serde(rename = "2class")]
    TwoClass,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::ThreeClass => "3class",
            Protocol::TwoClass => "2class",
        }
    }

    /// Classes averaged by macro-F1.
    pub fn classes(self) -> &'static [PceLabel] {
        match self {
            Protocol::ThreeClass => &PceLabel::ALL,
            Protocol::TwoClass => &[PceLabel::Yes, PceLabel::No],
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "3class" => Ok(Protocol::ThreeClass),
            "2class" => Ok(Protocol::TwoClass),
            other => Err(EvalError::UnknownProtocol(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Under 2class, replace an Unclear prediction by the more probable of Yes/No
    /// instead of scoring it as an error.
    pub twoclass_remap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: PceLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Evaluated samples with this gold label.
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub n_evaluated: usize,
    pub n_total: usize,
    /// Rows are gold labels, columns predictions, both in code order.
    pub confusion: [[usize; 3]; 3],
    /// Per gold label, evaluated samples without a usable prediction. They count as errors.
    pub unparseable: [usize; 3],
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn unparseable_total(&self) -> usize {
        self.unparseable.iter().sum()
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Copy, Default)]
struct Counts {
    confusion: [[usize; 3]; 3],
    unparseable: [usize; 3],
}

impl Counts {
    fn merge(mut self, other: Counts) -> Counts {
        for g in 0..3 {
            self.unparseable[g] += other.unparseable[g];
            for p in 0..3 {
                self.confusion[g][p] += other.confusion[g][p];
            }
        }
        self
    }
}

const SHARD: usize = 4096;

/// Scores predicted labels, where `None` marks a missing or unparseable answer.
pub fn evaluate_labels(preds: &[Option<PceLabel>], golds: &[PceLabel], protocol: Protocol) -> Result<EvalReport, EvalError> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    let keep = |g: PceLabel| protocol == Protocol::ThreeClass || g != PceLabel::Unclear;
    // integer counts make the shard reduction exact
    let counts = preds
        .par_chunks(SHARD)
        .zip(golds.par_chunks(SHARD))
        .map(|(ps, gs)| {
            let mut c = Counts::default();
            for (p, &g) in ps.iter().zip(gs) {
                if !keep(g) {
                    continue;
                }
                match p {
                    Some(p) => c.confusion[g.code()][p.code()] += 1,
                    None => c.unparseable[g.code()] += 1,
                }
            }
            c
        })
        .reduce(Counts::default, Counts::merge);

    let n_evaluated: usize = counts.unparseable.iter().sum::<usize>() + counts.confusion.iter().flatten().sum::<usize>();
    if n_evaluated == 0 {
        return Err(EvalError::Empty(protocol));
    }
    let cm = &counts.confusion;
    let correct: usize = (0..3).map(|k| cm[k][k]).sum();
    let per_class: Vec<ClassMetrics> = protocol
        .classes()
        .iter()
        .map(|&label| {
            let k = label.code();
            let tp = cm[k][k];
            let predicted: usize = (0..3).map(|g| cm[g][k]).sum();
            let support = cm[k].iter().sum::<usize>() + counts.unparseable[k];
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                label,
                precision,
                recall,
                f1: f1(precision, recall),
                support,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64;
    Ok(EvalReport {
        protocol,
        n_evaluated,
        n_total: golds.len(),
        confusion: counts.confusion,
        unparseable: counts.unparseable,
        accuracy: ratio(correct, n_evaluated),
        macro_f1,
        per_class,
        config: serde_json::Value::Null,
    })
}

pub fn evaluate(preds: &[Prediction], golds: &[PceLabel], protocol: Protocol) -> Result<EvalReport, EvalError> {
    evaluate_with(preds, golds, protocol, EvalOptions::default())
}

pub fn evaluate_with(
    preds: &[Prediction],
    golds: &[PceLabel],
    protocol: Protocol,
    opts: EvalOptions,
) -> Result<EvalReport, EvalError> {
    let labels: Vec<Option<PceLabel>> = preds
        .iter()
        .map(|p| {
            let l = p.label();
            if protocol == Protocol::TwoClass && opts.twoclass_remap && l == PceLabel::Unclear {
                Some(p.binary_label())
            } else {
                Some(l)
            }
        })
        .collect();
    evaluate_labels(&labels, golds, protocol)
}

/// Constant predictor of the most frequent training class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NaiveBaseline {
    pub class: PceLabel,
}

impl NaiveBaseline {
    pub fn predict(&self) -> Prediction {
        Prediction::certain(self.class)
    }

    pub fn predict_n(&self, n: usize) -> Vec<Prediction> {
        vec![self.predict(); n]
    }
}

/// Modal class of `train_golds`, ties to the lowest code. `None` when empty.
pub fn naive_baseline(train_golds: &[PceLabel]) -> Option<NaiveBaseline> {
    if train_golds.is_empty() {
        return None;
    }
    let mut counts = [0usize; 3];
    for g in train_golds {
        counts[g.code()] += 1;
    }
    let mut best = 0;
    for k in 1..3 {
        if counts[k] > counts[best] {
            best = k;
        }
    }
    Some(NaiveBaseline { class: PceLabel::ALL[best] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use PceLabel::*;

    #[test]
    fn perfect_predictions() {
        let golds = [Yes, No, Unclear, Yes];
        let preds: Vec<_> = golds.iter().map(|&g| Prediction::certain(g)).collect();
        for protocol in [Protocol::ThreeClass, Protocol::TwoClass] {
            let r = evaluate(&preds, &golds, protocol).unwrap();
            assert_eq!(r.accuracy, 1.0);
            assert_eq!(r.macro_f1, 1.0);
        }
    }

    #[test]
    fn two_class_drops_gold_unclear_and_counts_unclear_predictions_as_errors() {
        let golds = [Yes, No, Unclear, Yes];
        let preds = [Some(Yes), Some(Unclear), Some(Unclear), Some(Yes)];
        let r = evaluate_labels(&preds, &golds, Protocol::TwoClass).unwrap();
        assert_eq!(r.n_evaluated, 3);
        assert_eq!(r.n_total, 4);
        assert_eq!(r.confusion[2], [0, 0, 0]);
        assert!((r.accuracy - 2.0 / 3.0).abs() < 1e-15);
        // No: precision 0/0 → 0, recall 0 → f1 0; Yes: p=1, r=1
        assert!((r.macro_f1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn remap_picks_the_binary_runner_up() {
        let p = Prediction::new([0.1, 0.3, 0.6]).unwrap();
        let r = evaluate_with(&[p], &[No], Protocol::TwoClass, EvalOptions { twoclass_remap: true }).unwrap();
        assert_eq!(r.accuracy, 1.0);
        let r = evaluate(&[p], &[No], Protocol::TwoClass).unwrap();
        assert_eq!(r.accuracy, 0.0);
    }

    #[test]
    fn unparseable_is_an_error_under_both_protocols() {
        let r = evaluate_labels(&[None, Some(No)], &[Yes, No], Protocol::ThreeClass).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.unparseable, [1, 0, 0]);
        assert_eq!(r.per_class[0].recall, 0.0);
        let r = evaluate_labels(&[None, Some(No)], &[Yes, No], Protocol::TwoClass).unwrap();
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(
            evaluate_labels(&[Some(Yes)], &[], Protocol::ThreeClass).unwrap_err(),
            EvalError::LengthMismatch { preds: 1, golds: 0 }
        );
        assert_eq!(
            evaluate_labels(&[Some(Yes)], &[Unclear], Protocol::TwoClass).unwrap_err(),
            EvalError::Empty(Protocol::TwoClass)
        );
    }

    #[test]
    fn naive_ties_go_to_lowest_code() {
        assert_eq!(naive_baseline(&[No, Unclear, Unclear, No]).unwrap().class, No);
        assert_eq!(naive_baseline(&[Yes, Yes, No]).unwrap().class, Yes);
        assert!(naive_baseline(&[]).is_none());
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [Protocol::ThreeClass, Protocol::TwoClass] {
            assert_eq!(p.as_str().parse::<Protocol>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert!("3".parse::<Protocol>().is_err());
    }
}
