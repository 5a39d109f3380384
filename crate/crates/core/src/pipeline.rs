//! The two-stage concept selection pipeline end to end.

use serde::{Deserialize, Serialize};

use crate::annotator::annotate_subset;
use crate::dataset::{ConceptLibrary, ImageSet};
use crate::error::{CsmError, Result};
use crate::fine::{
    extract_core, train_core, train_mask, ConceptModel, MaskSummary, MaskTraining, TrainConfig,
};
use crate::rough::{greedy_select, RoughConfig, SelectionResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsmConfig {
    pub rough: RoughConfig,
    pub n_star: usize,
    pub train: TrainConfig,
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone)]
pub struct CsmFit {
    pub selection: SelectionResult,
    pub mask: MaskTraining,
    /// Positions into the head, in core order.
    pub core_positions: Vec<usize>,
    pub model: ConceptModel,
}

/// Head concepts in, trained mask out.
pub fn train_head_mask(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    head_indices: &[usize],
    cfg: &TrainConfig,
) -> Result<MaskTraining> {
    let labels = train.require_labels("mask training")?;
    let num_classes = require_classes(train)?;
    let acts = annotate_subset(concepts, head_indices, train)?;
    train_mask(&acts, labels, num_classes, cfg)
}

/// Retrains the final model on the given library concepts and names it.
pub fn retrain_on(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    core_indices: &[usize],
    cfg: &TrainConfig,
) -> Result<ConceptModel> {
    let labels = train.require_labels("retraining")?;
    let num_classes = require_classes(train)?;
    let acts = annotate_subset(concepts, core_indices, train)?;
    let model = train_core(&acts, labels, num_classes, cfg)?.model;
    let names = core_indices
        .iter()
        .map(|&i| concepts.name(i).to_string())
        .collect();
    model.with_names(names, train.class_names())
}

/// Core extraction plus retraining from an already trained mask.
pub fn finish_from_mask(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    mask: &MaskTraining,
    n_star: usize,
    cfg: &TrainConfig,
) -> Result<(Vec<usize>, ConceptModel)> {
    let positions = extract_core(&mask.model, n_star)?;
    let core: Vec<usize> = positions
        .iter()
        .map(|&p| mask.model.head_indices[p])
        .collect();
    let mut model = retrain_on(concepts, train, &core, cfg)?;
    model.mask = Some(MaskSummary {
        head_indices: mask.model.head_indices.clone(),
        mask_logits: mask.model.mask_logits.clone(),
    });
    Ok((positions, model))
}

/// Greedy rough selection, mask fine selection and retraining.
pub fn fit_csm(concepts: &ConceptLibrary, train: &ImageSet, cfg: &CsmConfig) -> Result<CsmFit> {
    let selection = greedy_select(concepts, train, &cfg.rough)?;
    let mask = train_head_mask(concepts, train, &selection.selected, &cfg.train)?;
    let (core_positions, model) = finish_from_mask(concepts, train, &mask, cfg.n_star, &cfg.train)?;
    Ok(CsmFit {
        selection,
        mask,
        core_positions,
        model,
    })
}

pub(crate) fn require_classes(images: &ImageSet) -> Result<usize> {
    images
        .num_classes()
        .ok_or_else(|| CsmError::invalid("image set has no class count"))
}
