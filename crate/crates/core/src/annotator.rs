//! Concept activations and per-concept statistics.
//!
//! The activation of concept `i` on image `k` is the plain dot product of the
//! raw image embedding with the unit concept embedding.

use std::collections::HashSet;

use crate::dataset::{ConceptLibrary, ImageSet};
use crate::error::{CsmError, Result};
use crate::matrix::{dot, Matrix};

/// `K x N` activations together with the library index of every column.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: Matrix,
    concept_indices: Vec<usize>,
}

impl ActivationMatrix {
    pub fn new(values: Matrix, concept_indices: Vec<usize>) -> Result<Self> {
        if values.cols() != concept_indices.len() {
            return Err(CsmError::DimensionMismatch(format!(
                "{} columns but {} concept indices",
                values.cols(),
                concept_indices.len()
            )));
        }
        let mut seen = HashSet::with_capacity(concept_indices.len());
        if let Some(dup) = concept_indices.iter().find(|&&i| !seen.insert(i)) {
            return Err(CsmError::invalid(format!("duplicate concept index {dup}")));
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(CsmError::NonFinite(pos));
        }
        Ok(Self {
            values,
            concept_indices,
        })
    }

    /// Wraps a raw feature matrix, numbering columns `0..cols`.
    pub fn from_features(values: Matrix) -> Result<Self> {
        let idx = (0..values.cols()).collect();
        Self::new(values, idx)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn concept_indices(&self) -> &[usize] {
        &self.concept_indices
    }

    pub fn num_images(&self) -> usize {
        self.values.rows()
    }

    pub fn num_concepts(&self) -> usize {
        self.values.cols()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        self.values.row(k)
    }

    /// Keeps the listed column positions, in order.
    pub fn select_positions(&self, positions: &[usize]) -> Result<Self> {
        if let Some(p) = positions.iter().find(|&&p| p >= self.num_concepts()) {
            return Err(CsmError::invalid(format!(
                "position {p} outside {} columns",
                self.num_concepts()
            )));
        }
        let idx = positions.iter().map(|&p| self.concept_indices[p]).collect();
        Self::new(self.values.select_columns(positions), idx)
    }

    pub fn select_images(&self, rows: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(rows),
            concept_indices: self.concept_indices.clone(),
        }
    }
}

/// Activations of every image against every library concept.
pub fn annotate(concepts: &ConceptLibrary, images: &ImageSet) -> Result<ActivationMatrix> {
    let all: Vec<usize> = (0..concepts.len()).collect();
    annotate_subset(concepts, &all, images)
}

/// Activations against the listed library concepts only, columns in list order.
pub fn annotate_subset(
    concepts: &ConceptLibrary,
    indices: &[usize],
    images: &ImageSet,
) -> Result<ActivationMatrix> {
    if concepts.dim() != images.dim() {
        return Err(CsmError::DimensionMismatch(format!(
            "concepts have d={}, images have d={}",
            concepts.dim(),
            images.dim()
        )));
    }
    concepts.check_indices(indices)?;
    let values = project(images.embeddings(), concepts.embeddings(), indices);
    ActivationMatrix::new(values, indices.to_vec())
}

/// `vectors · basis[indices]ᵀ`.
pub(crate) fn project(vectors: &Matrix, basis: &Matrix, indices: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(vectors.rows(), indices.len());
    for k in 0..vectors.rows() {
        let v = vectors.row(k);
        for (dst, &i) in out.row_mut(k).iter_mut().zip(indices) {
            *dst = dot(v, basis.row(i));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptStats {
    pub means: Vec<f64>,
    /// Population variances (divided by `K`).
    pub variances: Vec<f64>,
}

pub fn concept_stats(acts: &ActivationMatrix) -> Result<ConceptStats> {
    column_stats(acts.values())
}

/// Two-pass population mean and variance of every column.
pub fn column_stats(values: &Matrix) -> Result<ConceptStats> {
    let k = values.rows();
    if k < 2 {
        return Err(CsmError::invalid(format!(
            "variance needs at least 2 samples, got {k}"
        )));
    }
    let n = values.cols();
    let mut means = vec![0.0; n];
    for row in values.iter_rows() {
        for (m, v) in means.iter_mut().zip(row) {
            *m += v;
        }
    }
    means.iter_mut().for_each(|m| *m /= k as f64);
    let mut variances = vec![0.0; n];
    for row in values.iter_rows() {
        for ((acc, v), m) in variances.iter_mut().zip(row).zip(&means) {
            let c = v - m;
            *acc += c * c;
        }
    }
    variances.iter_mut().for_each(|v| *v /= k as f64);
    Ok(ConceptStats { means, variances })
}

/// Fractional ranks (1-based); tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CsmError::DimensionMismatch(format!(
            "spearman inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(CsmError::invalid("spearman needs at least 2 values"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(CsmError::invalid("spearman inputs must be finite"));
    }
    pearson(&average_ranks(a), &average_ranks(b))
        .ok_or_else(|| CsmError::Numerical("zero rank variance".into()))
}

/// Indices of the `k` largest values, largest first, ties to the lower index.
pub fn top_k_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Size of the intersection of the two top-`k` variance sets.
pub fn top_k_overlap(a: &[f64], b: &[f64], k: usize) -> Result<usize> {
    if a.len() != b.len() {
        return Err(CsmError::DimensionMismatch(format!(
            "overlap inputs of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if k == 0 || k > a.len() {
        return Err(CsmError::invalid(format!(
            "k must be in [1, {}], got {k}",
            a.len()
        )));
    }
    let top_a: HashSet<usize> = top_k_indices(a, k).into_iter().collect();
    Ok(top_k_indices(b, k)
        .into_iter()
        .filter(|i| top_a.contains(i))
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::EmbeddingBundle;

    fn basis_library(d: usize) -> ConceptLibrary {
        let mut rows = vec![0.0f32; d * d];
        for i in 0..d {
            rows[i * d + i] = 1.0;
        }
        let names = (0..d).map(|i| format!("e{i}")).collect();
        ConceptLibrary::new(EmbeddingBundle::concepts(d, rows, names).unwrap()).unwrap()
    }

    fn images(d: usize, rows: Vec<f32>) -> ImageSet {
        ImageSet::new(EmbeddingBundle::images(d, rows).unwrap()).unwrap()
    }

    #[test]
    fn basis_annotation_is_identity() {
        let acts = annotate(&basis_library(4), &images(4, vec![0.5, -0.2, 0.0, 0.0])).unwrap();
        let got: Vec<f64> = acts.row(0).to_vec();
        let want = [0.5f32 as f64, -0.2f32 as f64, 0.0, 0.0];
        assert_eq!(got, want);
    }

    #[test]
    fn orthogonal_image_gives_zero_row() {
        let lib = ConceptLibrary::new(
            EmbeddingBundle::concepts(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0], vec!["a".into(), "b".into()])
                .unwrap(),
        )
        .unwrap();
        let acts = annotate(&lib, &images(3, vec![0.0, 0.0, 2.0])).unwrap();
        assert_eq!(acts.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            annotate(&basis_library(3), &images(4, vec![1.0; 4])),
            Err(CsmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn constant_and_two_point_columns() {
        let m = Matrix::from_rows(&[vec![0.7, 0.0], vec![0.7, 1.0]]);
        let s = column_stats(&m).unwrap();
        assert_eq!(s.variances[0], 0.0);
        assert!((s.means[0] - 0.7).abs() < 1e-15);
        assert_eq!(s.variances[1], 0.25);
    }

    #[test]
    fn stats_need_two_samples() {
        assert!(column_stats(&Matrix::from_rows(&[vec![1.0]])).is_err());
    }

    #[test]
    fn spearman_extremes() {
        let x = [0.3, 1.5, -2.0, 4.0, 0.9];
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        let rev: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&[1.0, 1.0], &[0.0, 2.0]).is_err());
    }

    #[test]
    fn average_ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn overlap_cases() {
        let v = [5.0, 4.0, 3.0, 2.0, 1.0, 0.0];
        assert_eq!(top_k_overlap(&v, &v, 3).unwrap(), 3);
        let w = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(top_k_overlap(&v, &w, 3).unwrap(), 0);
        assert!(top_k_overlap(&v, &w, 0).is_err());
        // ties resolve to lower index
        assert_eq!(top_k_indices(&[1.0, 2.0, 2.0, 2.0], 2), vec![1, 2]);
    }
}
