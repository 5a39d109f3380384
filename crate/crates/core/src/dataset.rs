//! Validated views over bundles: the concept library and labelled image sets.

use crate::bundle::{BundleKind, EmbeddingBundle};
use crate::error::{CsmError, Result};
use crate::matrix::Matrix;

/// `N` unit-norm concept embeddings with their names.
#[derive(Debug, Clone)]
pub struct ConceptLibrary {
    names: Vec<String>,
    embeddings: Matrix,
}

impl ConceptLibrary {
    pub fn new(bundle: EmbeddingBundle) -> Result<Self> {
        if bundle.kind != BundleKind::Concepts {
            return Err(CsmError::invalid("expected a concept bundle"));
        }
        bundle.validate()?;
        let embeddings = bundle.to_matrix();
        Ok(Self {
            names: bundle.names.unwrap_or_default(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.embeddings.row(i)
    }

    pub fn check_indices(&self, indices: &[usize]) -> Result<()> {
        match indices.iter().find(|&&i| i >= self.len()) {
            Some(i) => Err(CsmError::invalid(format!(
                "concept index {i} outside library of {}",
                self.len()
            ))),
            None => Ok(()),
        }
    }
}

/// `K` image embeddings, optionally labelled.
#[derive(Debug, Clone)]
pub struct ImageSet {
    embeddings: Matrix,
    labels: Option<Vec<usize>>,
    num_classes: Option<usize>,
    class_names: Option<Vec<String>>,
    ids: Vec<String>,
}

impl ImageSet {
    /// Images without `ids.txt` get zero-padded row numbers as ids, so that
    /// lexicographic id order equals row order.
    pub fn new(bundle: EmbeddingBundle) -> Result<Self> {
        if bundle.kind != BundleKind::Images {
            return Err(CsmError::invalid("expected an image bundle"));
        }
        bundle.validate()?;
        let embeddings = bundle.to_matrix();
        let count = embeddings.rows();
        let ids = bundle.ids.unwrap_or_else(|| {
            let width = count.saturating_sub(1).max(1).to_string().len();
            (0..count).map(|i| format!("{i:0width$}")).collect()
        });
        Ok(Self {
            embeddings,
            labels: bundle
                .labels
                .map(|l| l.into_iter().map(|v| v as usize).collect()),
            num_classes: bundle.num_classes,
            class_names: bundle.names,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn embeddings(&self) -> &Matrix {
        &self.embeddings
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Labels, or an error naming the operation that needed them.
    pub fn require_labels(&self, op: &str) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| CsmError::invalid(format!("{op} needs a labelled image set")))
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.num_classes
    }

    pub fn class_names(&self) -> Vec<String> {
        match (&self.class_names, self.num_classes) {
            (Some(names), _) => names.clone(),
            (None, Some(n)) => (0..n).map(|c| c.to_string()).collect(),
            (None, None) => Vec::new(),
        }
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    /// Rows in the given order; labels and ids follow.
    pub fn subset(&self, rows: &[usize]) -> ImageSet {
        ImageSet {
            embeddings: self.embeddings.select_rows(rows),
            labels: self
                .labels
                .as_ref()
                .map(|l| rows.iter().map(|&r| l[r]).collect()),
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
        }
    }
}
