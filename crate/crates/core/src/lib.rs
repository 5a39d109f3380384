//! Concept selection models over joint image-text embeddings.
//!
//! Images and a library of named concepts live in the same embedding space, so
//! every concept gets an activation on every image by a dot product. This crate
//! picks a small set of concepts that a linear classifier can use:
//!
//! 1. [`rough::greedy_select`] keeps the head concepts with the largest
//!    activation variance, deflating the images after each pick so that
//!    near-synonyms do not crowd the head.
//! 2. [`fine::train_mask`] learns a sigmoid importance gate over the head jointly
//!    with a linear classifier; [`fine::extract_core`] keeps the strongest
//!    gates and [`fine::train_core`] retrains the classifier on them.
//!
//! [`explain`] turns the final model into per-image explanations and supports
//! editing concept activations to debug wrong predictions.

pub mod annotator;
pub mod bundle;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod explain;
pub mod fine;
pub mod matrix;
#[cfg(any(test, feature = "oracles"))]
pub mod oracles;
pub mod pipeline;
pub mod rough;

pub use annotator::{annotate, concept_stats, spearman, top_k_overlap, ActivationMatrix, ConceptStats};
pub use bundle::{generate_synthetic, load_bundle, save_bundle, EmbeddingBundle, SyntheticSpec};
pub use dataset::{ConceptLibrary, ImageSet};
pub use error::{CsmError, Result};
pub use fine::{ConceptModel, MaskModel, TrainConfig};
pub use matrix::Matrix;
pub use pipeline::{fit_csm, CsmConfig};
pub use rough::{greedy_select, DeflationMode, RoughConfig, SelectionResult};
