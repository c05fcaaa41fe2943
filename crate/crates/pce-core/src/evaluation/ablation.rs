use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, EvalError, NaiveBaseline, Protocol};
use crate::data::PceLabel;
use crate::models::Prediction;

/// A model trained with a given combination of alignment signals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct AblationVariant {
    pub model: &'static str,
    /// Fixation sequence input.
    pub eyetrack: bool,
    /// Participant embedding.
    pub user: bool,
    /// Stimulus content features.
    pub stimulus: bool,
}

const fn variant(model: &'static str, eyetrack: bool, user: bool, stimulus: bool) -> AblationVariant {
    AblationVariant {
        model,
        eyetrack,
        user,
        stimulus,
    }
}

pub const NAIVE_VARIANT: AblationVariant = variant("Naive", false, false, false);

/// Trained rows of the table, in display order below the naive row.
pub const TABLE_VARIANTS: [AblationVariant; 5] = [
    variant("LSTM", true, false, false),
    variant("LSTM", true, true, false),
    variant("Transformer", false, false, true),
    variant("Transformer", false, true, true),
    variant("Ensemble", true, true, true),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMetrics {
    pub f1_3class: f64,
    pub acc_3class: f64,
    pub f1_2class: f64,
    pub acc_2class: f64,
}

impl CellMetrics {
    pub fn compute(preds: &[Prediction], golds: &[PceLabel]) -> Result<Self, EvalError> {
        let three = evaluate(preds, golds, Protocol::ThreeClass)?;
        let two = evaluate(preds, golds, Protocol::TwoClass)?;
        Ok(CellMetrics {
            f1_3class: three.macro_f1,
            acc_3class: three.accuracy,
            f1_2class: two.macro_f1,
            acc_2class: two.accuracy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    /// `None` when the variant was not trained.
    pub metrics: Option<CellMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// Naive row followed by one row per [`TABLE_VARIANTS`] entry, each scored on `golds`.
pub fn ablation_table(
    naive: &NaiveBaseline,
    golds: &[PceLabel],
    results: &[(AblationVariant, Vec<Prediction>)],
) -> Result<AblationTable, EvalError> {
    let mut rows = vec![AblationRow {
        variant: NAIVE_VARIANT,
        metrics: Some(CellMetrics::compute(&naive.predict_n(golds.len()), golds)?),
    }];
    for v in TABLE_VARIANTS {
        let metrics = match results.iter().find(|(rv, _)| *rv == v) {
            Some((_, preds)) => Some(CellMetrics::compute(preds, golds)?),
            None => None,
        };
        rows.push(AblationRow { variant: v, metrics });
    }
    Ok(AblationTable { rows })
}

fn sign(b: bool) -> &'static str {
    if b {
        "+"
    } else {
        "-"
    }
}

impl AblationTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,eyetrack,user,stimulus,f1_3class,acc_3class,f1_2class,acc_2class\n");
        for r in &self.rows {
            let v = r.variant;
            let _ = write!(out, "{},{},{},{}", v.model, sign(v.eyetrack), sign(v.user), sign(v.stimulus));
            match r.metrics {
                Some(m) => {
                    let _ = writeln!(out, ",{:.4},{:.4},{:.4},{:.4}", m.f1_3class, m.acc_3class, m.f1_2class, m.acc_2class);
                }
                None => out.push_str(",absent,absent,absent,absent\n"),
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>3} {:>3} {:>3}  {:>8} {:>8}  {:>8} {:>8}",
            "model", "eye", "usr", "stm", "F1 (3)", "Acc (3)", "F1 (2)", "Acc (2)"
        );
        for r in &self.rows {
            let v = r.variant;
            let _ = write!(out, "{:<12} {:>3} {:>3} {:>3}", v.model, sign(v.eyetrack), sign(v.user), sign(v.stimulus));
            match r.metrics {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        "  {:>8.4} {:>8.4}  {:>8.4} {:>8.4}",
                        m.f1_3class, m.acc_3class, m.f1_2class, m.acc_2class
                    );
                }
                None => {
                    let _ = writeln!(out, "  {:>8} {:>8}  {:>8} {:>8}", "absent", "absent", "absent", "absent");
                }
            }
        }
        out
    }
}
