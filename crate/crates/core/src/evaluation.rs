//! Accuracy evaluation, baselines, concept-quantity sweeps and few-shot runs.

use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotator::{annotate_subset, ActivationMatrix};
use crate::dataset::{ConceptLibrary, ImageSet};
use crate::error::{CsmError, Result};
use crate::fine::{predict, train_core, ConceptModel, TrainConfig};
use crate::pipeline::{finish_from_mask, fit_csm, require_classes, retrain_on, train_head_mask, CsmConfig};
use crate::rough::greedy_select;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Csm,
    Random,
    LinearProbe,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Csm => "csm",
            Method::Random => "random",
            Method::LinearProbe => "linear_probe",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub accuracy: f64,
    pub n_star: usize,
    pub shots: Option<usize>,
    pub seed: u64,
}

pub const CSV_HEADER: &str = "method,n_star,shots,seed,accuracy";

impl EvalReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method,
            self.n_star,
            self.shots.map(|s| s.to_string()).unwrap_or_default(),
            self.seed,
            self.accuracy
        )
    }
}

pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Fraction of rows whose argmax prediction matches the label.
pub fn accuracy(model: &ConceptModel, acts: &ActivationMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != acts.num_images() || labels.is_empty() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            acts.num_images()
        )));
    }
    let (pred, _) = predict(model, acts.values())?;
    let correct = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Core-concept activations of `images` for `model`.
pub fn core_activations(
    model: &ConceptModel,
    images: &ImageSet,
    concepts: &ConceptLibrary,
) -> Result<ActivationMatrix> {
    annotate_subset(concepts, &model.core_indices, images)
}

/// Class count of `images` agrees with `model`.
pub fn check_compatible(model: &ConceptModel, images: &ImageSet) -> Result<()> {
    if let Some(nc) = images.num_classes() {
        if nc != model.num_classes() {
            return Err(CsmError::DimensionMismatch(format!(
                "image set has {nc} classes, model has {}",
                model.num_classes()
            )));
        }
    }
    Ok(())
}

/// Accuracy of `model` on a labelled test set, reported as a CSM row.
pub fn evaluate(model: &ConceptModel, test: &ImageSet, concepts: &ConceptLibrary) -> Result<EvalReport> {
    let labels = test.require_labels("evaluation")?;
    check_compatible(model, test)?;
    let acts = core_activations(model, test, concepts)?;
    Ok(EvalReport {
        method: Method::Csm,
        accuracy: accuracy(model, &acts, labels)?,
        n_star: model.n_star(),
        shots: None,
        seed: model.config.seed,
    })
}

/// `n_star` distinct library indices drawn uniformly, ascending.
pub fn random_concepts(num_concepts: usize, n_star: usize, seed: u64) -> Result<Vec<usize>> {
    if n_star == 0 || n_star > num_concepts {
        return Err(CsmError::invalid(format!(
            "n_star must be in [1, {num_concepts}], got {n_star}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = index::sample(&mut rng, num_concepts, n_star).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Trains the final model on randomly drawn library concepts.
pub fn random_baseline(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    test: &ImageSet,
    n_star: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<EvalReport> {
    let chosen = random_concepts(concepts.len(), n_star, seed)?;
    let model = retrain_on(concepts, train, &chosen, cfg)?;
    let mut report = evaluate(&model, test, concepts)?;
    report.method = Method::Random;
    report.seed = seed;
    Ok(report)
}

/// A linear classifier on the raw image embeddings. Returns the trained model
/// (its "concepts" are the embedding coordinates) with the report.
pub fn linear_probe_model(train: &ImageSet, cfg: &TrainConfig) -> Result<ConceptModel> {
    let labels = train.require_labels("linear probing")?;
    let num_classes = require_classes(train)?;
    let acts = ActivationMatrix::from_features(train.embeddings().clone())?;
    Ok(train_core(&acts, labels, num_classes, cfg)?.model)
}

pub fn linear_probe(train: &ImageSet, test: &ImageSet, cfg: &TrainConfig) -> Result<EvalReport> {
    let labels = test.require_labels("evaluation")?;
    if train.dim() != test.dim() {
        return Err(CsmError::DimensionMismatch(format!(
            "train d={} vs test d={}",
            train.dim(),
            test.dim()
        )));
    }
    let model = linear_probe_model(train, cfg)?;
    check_compatible(&model, test)?;
    let acts = ActivationMatrix::from_features(test.embeddings().clone())?;
    Ok(EvalReport {
        method: Method::LinearProbe,
        accuracy: accuracy(&model, &acts, labels)?,
        n_star: train.dim(),
        shots: None,
        seed: cfg.seed,
    })
}

/// One rough selection and one mask training, then a retrained head per entry
/// of `n_star_list` (in list order).
pub fn quantity_sweep(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    test: &ImageSet,
    n_star_list: &[usize],
    cfg: &CsmConfig,
) -> Result<Vec<EvalReport>> {
    let selection = greedy_select(concepts, train, &cfg.rough)?;
    let mask = train_head_mask(concepts, train, &selection.selected, &cfg.train)?;
    n_star_list
        .iter()
        .map(|&n| {
            let (_, model) = finish_from_mask(concepts, train, &mask, n, &cfg.train)?;
            evaluate(&model, test, concepts)
        })
        .collect()
}

/// splitmix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the per-class sampler for `(seed, class)`.
pub fn class_seed(seed: u64, class: usize) -> u64 {
    mix64(mix64(seed) ^ mix64((class as u64).wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// `shots` rows per class without replacement, grouped by class, each group
/// ascending.
pub fn few_shot_indices(labels: &[usize], num_classes: usize, shots: usize, seed: u64) -> Result<Vec<usize>> {
    if shots == 0 {
        return Err(CsmError::invalid("shots must be >= 1"));
    }
    let mut out = Vec::with_capacity(shots * num_classes);
    for class in 0..num_classes {
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < shots {
            return Err(CsmError::invalid(format!(
                "class {class} has {} training images, {shots} shots requested",
                members.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed(seed, class));
        let mut picked: Vec<usize> = index::sample(&mut rng, members.len(), shots)
            .into_iter()
            .map(|i| members[i])
            .collect();
        picked.sort_unstable();
        out.extend(picked);
    }
    Ok(out)
}

/// CSM and a linear probe trained on the same `shots`-per-class subset.
///
/// The head size is capped at the library size; rough selection sees only the
/// sampled images.
pub fn few_shot(
    concepts: &ConceptLibrary,
    train: &ImageSet,
    test: &ImageSet,
    shots: usize,
    cfg: &CsmConfig,
    seed: u64,
) -> Result<(EvalReport, EvalReport)> {
    let labels = train.require_labels("few-shot sampling")?;
    let num_classes = require_classes(train)?;
    let rows = few_shot_indices(labels, num_classes, shots, seed)?;
    let subset = train.subset(&rows);

    let mut csm_cfg = *cfg;
    csm_cfg.rough.head_size = cfg.rough.head_size.min(concepts.len());
    let fit = fit_csm(concepts, &subset, &csm_cfg)?;
    let mut csm = evaluate(&fit.model, test, concepts)?;
    csm.shots = Some(shots);
    csm.seed = seed;

    let mut probe = linear_probe(&subset, test, &cfg.train)?;
    probe.shots = Some(shots);
    probe.seed = seed;
    Ok((csm, probe))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let r = EvalReport {
            method: Method::LinearProbe,
            accuracy: 0.5,
            n_star: 4,
            shots: None,
            seed: 3,
        };
        assert_eq!(r.csv_row(), "linear_probe,4,,3,0.5");
        let csv = reports_to_csv(&[r]);
        assert!(csv.starts_with("method,n_star,shots,seed,accuracy\n"));
    }

    #[test]
    fn random_concepts_are_seeded_and_distinct() {
        let a = random_concepts(50, 10, 4).unwrap();
        assert_eq!(a, random_concepts(50, 10, 4).unwrap());
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 10);
        assert_eq!(random_concepts(5, 5, 9).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(random_concepts(5, 6, 9).is_err());
    }

    #[test]
    fn few_shot_sampling_is_per_class() {
        let labels = [0, 1, 0, 1, 0, 1, 2, 2];
        let idx = few_shot_indices(&labels, 3, 2, 17).unwrap();
        assert_eq!(idx.len(), 6);
        let classes: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        assert_eq!(classes, vec![0, 0, 1, 1, 2, 2]);
        assert_eq!(idx, few_shot_indices(&labels, 3, 2, 17).unwrap());
        assert!(few_shot_indices(&labels, 3, 3, 17).is_err());
        assert_eq!(few_shot_indices(&labels, 3, 2, 0).unwrap()[4..], [6, 7]);
    }

    #[test]
    fn class_seeds_differ() {
        assert_ne!(class_seed(1, 0), class_seed(1, 1));
        assert_ne!(class_seed(1, 0), class_seed(2, 0));
    }
}
