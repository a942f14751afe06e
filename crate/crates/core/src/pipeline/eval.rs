use serde::Serialize;

use crate::corpus::{LabelSet, Snippet};
use crate::error::{Error, Result};
use crate::inference::LabelAssignment;

use super::Model;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LabelCounts {
    pub label: String,
    pub predicted: u64,
    pub gold: u64,
    pub correct: u64,
}

/// Micro-averaged scores over dropped-pronoun slots plus diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub predicted: u64,
    pub gold: u64,
    pub correct: u64,
    pub per_label: Vec<LabelCounts>,
    pub labels: Vec<String>,
    /// `confusion[gold][predicted]` over all tokens, `None` included.
    pub confusion: Vec<Vec<u64>>,
}

pub fn f_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// A slot is predicted when its label is not `None` and correct when it
/// also equals a non-`None` gold label.
pub fn score_predictions(labels: &LabelSet, gold: &[LabelAssignment], predicted: &[LabelAssignment]) -> Result<EvalReport> {
    let k = labels.len();
    let none = labels.none_index();
    if gold.len() != predicted.len() {
        return Err(Error::Data(format!("{} gold snippets vs {} predicted", gold.len(), predicted.len())));
    }
    let mut per_label: Vec<LabelCounts> = labels
        .names()
        .iter()
        .map(|l| LabelCounts {
            label: l.clone(),
            ..LabelCounts::default()
        })
        .collect();
    let mut confusion = vec![vec![0u64; k]; k];
    for (g, p) in gold.iter().zip(predicted) {
        let g_shape: Vec<usize> = g.iter().map(Vec::len).collect();
        let p_shape: Vec<usize> = p.iter().map(Vec::len).collect();
        if g_shape != p_shape {
            return Err(Error::Data(format!("prediction shape {p_shape:?} vs gold {g_shape:?}")));
        }
        for (&gl, &pl) in g.iter().flatten().zip(p.iter().flatten()) {
            if gl >= k || pl >= k {
                return Err(Error::Data(format!("label index out of range for k={k}")));
            }
            confusion[gl][pl] += 1;
            if pl != none {
                per_label[pl].predicted += 1;
            }
            if gl != none {
                per_label[gl].gold += 1;
                if pl == gl {
                    per_label[gl].correct += 1;
                }
            }
        }
    }
    let predicted: u64 = per_label.iter().map(|c| c.predicted).sum();
    let gold: u64 = per_label.iter().map(|c| c.gold).sum();
    let correct: u64 = per_label.iter().map(|c| c.correct).sum();
    let precision = ratio(correct, predicted);
    let recall = ratio(correct, gold);
    Ok(EvalReport {
        precision,
        recall,
        f1: f_score(precision, recall),
        predicted,
        gold,
        correct,
        per_label,
        labels: labels.names().to_vec(),
        confusion,
    })
}

pub fn predict_all(model: &Model, snippets: &[Snippet]) -> Result<Vec<LabelAssignment>> {
    snippets.iter().map(|s| model.predict(s)).collect()
}

pub fn evaluate(model: &Model, snippets: &[Snippet]) -> Result<EvalReport> {
    let gold: Vec<LabelAssignment> = snippets
        .iter()
        .map(|s| {
            s.gold()
                .ok_or_else(|| Error::Data(format!("snippet {} has unlabeled tokens", s.id)))
        })
        .collect::<Result<_>>()?;
    score_predictions(&model.labels, &gold, &predict_all(model, snippets)?)
}
