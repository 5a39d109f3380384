//! Per-image explanations and concept interventions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::annotator::ActivationMatrix;
use crate::dataset::{ConceptLibrary, ImageSet};
use crate::error::{CsmError, Result};
use crate::evaluation::core_activations;
use crate::fine::{argmax, predict, ConceptModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptActivation {
    /// Position in the core set.
    pub position: usize,
    pub concept: String,
    pub raw: f64,
    /// z-score against the training activations.
    pub normalized: f64,
    /// `weights[c][position] * raw` for every class `c`.
    pub contributions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub image_id: String,
    pub predicted: usize,
    pub true_label: Option<usize>,
    /// Descending by normalized activation.
    pub top: Vec<ConceptActivation>,
    /// Ascending by normalized activation.
    pub bottom: Vec<ConceptActivation>,
    pub logits: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub image_id: String,
    pub position: usize,
    /// Replacement raw activation.
    pub value: f64,
}

fn check_row(model: &ConceptModel, acts: &[f64]) -> Result<()> {
    if acts.len() != model.n_star() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} activations for a model with {} concepts",
            acts.len(),
            model.n_star()
        )));
    }
    Ok(())
}

pub fn normalized_activations(model: &ConceptModel, acts: &[f64]) -> Vec<f64> {
    acts.iter()
        .zip(&model.display.means)
        .zip(&model.display.stds)
        .map(|((a, m), s)| (a - m) / s)
        .collect()
}

fn describe(model: &ConceptModel, acts: &[f64], normalized: &[f64], pos: usize) -> ConceptActivation {
    ConceptActivation {
        position: pos,
        concept: model.concept_names[pos].clone(),
        raw: acts[pos],
        normalized: normalized[pos],
        contributions: (0..model.num_classes())
            .map(|c| model.head.weights.get(c, pos) * acts[pos])
            .collect(),
    }
}

/// Top-`k` and bottom-`k` core concepts of one image by normalized activation.
pub fn explain(
    model: &ConceptModel,
    acts: &[f64],
    k: usize,
    image_id: &str,
    true_label: Option<usize>,
) -> Result<Explanation> {
    check_row(model, acts)?;
    if k > model.n_star() {
        return Err(CsmError::invalid(format!(
            "k={k} exceeds the {} core concepts",
            model.n_star()
        )));
    }
    let normalized = normalized_activations(model, acts);
    let mut order: Vec<usize> = (0..acts.len()).collect();
    order.sort_by(|&a, &b| normalized[b].total_cmp(&normalized[a]).then(a.cmp(&b)));
    let top = order[..k]
        .iter()
        .map(|&p| describe(model, acts, &normalized, p))
        .collect();
    order.sort_by(|&a, &b| normalized[a].total_cmp(&normalized[b]).then(a.cmp(&b)));
    let bottom = order[..k]
        .iter()
        .map(|&p| describe(model, acts, &normalized, p))
        .collect();
    let logits = model.logits(acts);
    Ok(Explanation {
        image_id: image_id.to_string(),
        predicted: argmax(&logits),
        true_label,
        top,
        bottom,
        logits,
        bias: model.head.bias.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Intervened {
    pub activations: Vec<f64>,
    pub logits: Vec<f64>,
    pub predicted: usize,
}

/// Replaces the given raw activations and recomputes the prediction. The input
/// row is not modified.
pub fn intervene(model: &ConceptModel, acts: &[f64], interventions: &[Intervention]) -> Result<Intervened> {
    check_row(model, acts)?;
    let mut seen = HashSet::new();
    let mut edited = acts.to_vec();
    for iv in interventions {
        if iv.position >= model.n_star() {
            return Err(CsmError::invalid(format!(
                "concept position {} outside the {} core concepts",
                iv.position,
                model.n_star()
            )));
        }
        if !iv.value.is_finite() {
            return Err(CsmError::invalid("intervention value must be finite"));
        }
        if !seen.insert(iv.position) {
            return Err(CsmError::invalid(format!(
                "concept position {} appears twice in one request",
                iv.position
            )));
        }
        edited[iv.position] = iv.value;
    }
    let logits = model.logits(&edited);
    Ok(Intervened {
        predicted: argmax(&logits),
        activations: edited,
        logits,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Misclassified {
    pub id: String,
    pub row: usize,
    pub predicted: usize,
    pub true_label: usize,
}

/// Rows whose prediction differs from the label, ordered by image id.
pub fn misclassified_rows(
    model: &ConceptModel,
    acts: &ActivationMatrix,
    labels: &[usize],
    ids: &[String],
) -> Result<Vec<Misclassified>> {
    let (pred, _) = predict(model, acts.values())?;
    if labels.len() != pred.len() || ids.len() != pred.len() {
        return Err(CsmError::DimensionMismatch(
            "labels, ids and activations differ in length".into(),
        ));
    }
    let mut out: Vec<Misclassified> = pred
        .iter()
        .zip(labels)
        .enumerate()
        .filter(|(_, (p, y))| p != y)
        .map(|(row, (&predicted, &true_label))| Misclassified {
            id: ids[row].clone(),
            row,
            predicted,
            true_label,
        })
        .collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

pub fn list_misclassified(
    model: &ConceptModel,
    test: &ImageSet,
    concepts: &ConceptLibrary,
) -> Result<Vec<Misclassified>> {
    let labels = test.require_labels("listing misclassified samples")?;
    let acts = core_activations(model, test, concepts)?;
    misclassified_rows(model, &acts, labels, test.ids())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DebugStrategy {
    /// Zero the one top-k concept whose removal best favours the true class.
    #[default]
    ZeroTopWrong,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebugReport {
    pub k: usize,
    pub misclassified: usize,
    pub recovered: usize,
    /// `recovered / misclassified`, 1.0 when nothing was misclassified.
    pub recovered_fraction: f64,
    pub accuracy_before: f64,
    pub accuracy_after: f64,
}

fn margin(logits: &[f64], truth: usize) -> f64 {
    let rival = logits
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != truth)
        .map(|(_, &z)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    logits[truth] - rival
}

/// Machine stand-in for a human debugging misclassified images: for each one,
/// try zeroing each of its top-`k` concepts and keep the edit that best
/// favours the true class (fixing the prediction first, then margin).
pub fn auto_debug_eval(
    model: &ConceptModel,
    acts: &ActivationMatrix,
    labels: &[usize],
    strategy: DebugStrategy,
    k: usize,
) -> Result<DebugReport> {
    let DebugStrategy::ZeroTopWrong = strategy;
    if k == 0 || k > model.n_star() {
        return Err(CsmError::invalid(format!(
            "k must be in [1, {}], got {k}",
            model.n_star()
        )));
    }
    if labels.len() != acts.num_images() || labels.is_empty() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            acts.num_images()
        )));
    }
    let (pred, _) = predict(model, acts.values())?;
    let total = labels.len();
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    let mut misclassified = 0;
    let mut recovered = 0;
    for (row, (&p, &y)) in pred.iter().zip(labels).enumerate() {
        if p == y {
            continue;
        }
        misclassified += 1;
        let a = acts.row(row);
        let exp = explain(model, a, k, "", Some(y))?;
        let mut best: Option<(bool, f64)> = None;
        for candidate in &exp.top {
            let out = intervene(
                model,
                a,
                &[Intervention {
                    image_id: String::new(),
                    position: candidate.position,
                    value: 0.0,
                }],
            )?;
            let score = (out.predicted == y, margin(&out.logits, y));
            let better = match best {
                None => true,
                Some((fixed, m)) => (score.0, score.1) > (fixed, m),
            };
            if better {
                best = Some(score);
            }
        }
        if matches!(best, Some((true, _))) {
            recovered += 1;
        }
    }
    Ok(DebugReport {
        k,
        misclassified,
        recovered,
        recovered_fraction: if misclassified == 0 {
            1.0
        } else {
            recovered as f64 / misclassified as f64
        },
        accuracy_before: correct as f64 / total as f64,
        accuracy_after: (correct + recovered) as f64 / total as f64,
    })
}
