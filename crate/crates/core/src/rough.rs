//! Greedy head-concept selection with deflation of the image representations.
//!
//! Each step annotates the current residual images against the whole library,
//! picks the not-yet-selected concept with the largest activation variance and
//! then removes that concept's direction from every image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotator::{column_stats, project};
use crate::dataset::{ConceptLibrary, ImageSet};
use crate::error::{CsmError, Result};
use crate::matrix::{dot, norm, Matrix};

/// Default head size for large libraries.
pub const DEFAULT_HEAD_SIZE: usize = 1000;

/// Residual norms at or below this make the cosine update undefined.
const ZERO_RESIDUAL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeflationMode {
    /// `v -= cos(v, w) * w`, i.e. the dot product scaled by `1 / |v|`.
    #[default]
    LiteralCosine,
    /// `v -= (v·w / |w|²) * w`, an exact orthogonal projection.
    ExactProjection,
}

impl fmt::Display for DeflationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeflationMode::LiteralCosine => "literal_cosine",
            DeflationMode::ExactProjection => "exact_projection",
        })
    }
}

impl FromStr for DeflationMode {
    type Err = CsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal_cosine" | "literal-cosine" => Ok(DeflationMode::LiteralCosine),
            "exact_projection" | "exact-projection" => Ok(DeflationMode::ExactProjection),
            other => Err(CsmError::invalid(format!("unknown deflation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughConfig {
    pub head_size: usize,
    pub mode: DeflationMode,
    /// Scale every image row to unit norm before the first step.
    pub normalize_images: bool,
}

impl RoughConfig {
    /// `min(1000, N)` head concepts, literal cosine deflation, raw images.
    pub fn for_library(num_concepts: usize) -> Self {
        Self {
            head_size: DEFAULT_HEAD_SIZE.min(num_concepts),
            mode: DeflationMode::default(),
            normalize_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    /// Library indices in selection order.
    pub selected: Vec<usize>,
    /// Winning residual variance at each step. Not necessarily monotone.
    pub scores: Vec<f64>,
    pub mode: DeflationMode,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// One line per step: `rank<TAB>concept_index<TAB>concept_name<TAB>variance`,
    /// ranks starting at 1.
    pub fn to_tsv(&self, concepts: &ConceptLibrary) -> String {
        let mut out = String::new();
        for (rank, (&idx, score)) in self.selected.iter().zip(&self.scores).enumerate() {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                rank + 1,
                idx,
                concepts.name(idx),
                score
            ));
        }
        out
    }
}

/// A parsed line of a selection file.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRow {
    pub rank: usize,
    pub concept_index: usize,
    pub concept_name: String,
    pub variance: f64,
}

/// Parses the selection file written by [`SelectionResult::to_tsv`]. Names may
/// contain tabs; the first two and the last field are split off first.
pub fn parse_selection_tsv(text: &str) -> Result<Vec<SelectionRow>> {
    let bad = |line: usize, detail: &str| {
        CsmError::format("selection file", format!("line {line}: {detail}"))
    };
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.is_empty() {
            continue;
        }
        let mut head = line.splitn(3, '\t');
        let rank = head.next().ok_or_else(|| bad(lineno, "missing rank"))?;
        let index = head.next().ok_or_else(|| bad(lineno, "missing concept index"))?;
        let rest = head.next().ok_or_else(|| bad(lineno, "missing name"))?;
        let (name, variance) = rest
            .rsplit_once('\t')
            .ok_or_else(|| bad(lineno, "missing variance"))?;
        let rank: usize = rank.parse().map_err(|_| bad(lineno, "rank is not an integer"))?;
        if rank != rows.len() + 1 {
            return Err(bad(lineno, "ranks must run 1, 2, 3, ..."));
        }
        let variance: f64 = variance
            .parse()
            .map_err(|_| bad(lineno, "variance is not a number"))?;
        if !variance.is_finite() {
            return Err(bad(lineno, "variance is not finite"));
        }
        rows.push(SelectionRow {
            rank,
            concept_index: index
                .parse()
                .map_err(|_| bad(lineno, "concept index is not an integer"))?,
            concept_name: name.to_string(),
            variance,
        });
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = rows.iter().find(|r| !seen.insert(r.concept_index)) {
        return Err(CsmError::format(
            "selection file",
            format!("concept {} selected twice", dup.concept_index),
        ));
    }
    Ok(rows)
}

/// Runs the greedy selection on the training images (labels are never read).
pub fn greedy_select(
    concepts: &ConceptLibrary,
    images: &ImageSet,
    cfg: &RoughConfig,
) -> Result<SelectionResult> {
    greedy_select_observed(concepts, images, cfg, |_, _| {})
}

/// [`greedy_select`], calling `observe(selected, residual)` after each
/// deflation step.
pub fn greedy_select_observed(
    concepts: &ConceptLibrary,
    images: &ImageSet,
    cfg: &RoughConfig,
    mut observe: impl FnMut(usize, &Matrix),
) -> Result<SelectionResult> {
    let n = concepts.len();
    if cfg.head_size == 0 || cfg.head_size > n {
        return Err(CsmError::invalid(format!(
            "head size must be in [1, {n}], got {}",
            cfg.head_size
        )));
    }
    if concepts.dim() != images.dim() {
        return Err(CsmError::DimensionMismatch(format!(
            "concepts have d={}, images have d={}",
            concepts.dim(),
            images.dim()
        )));
    }
    let mut residual = images.embeddings().clone();
    if cfg.normalize_images {
        for k in 0..residual.rows() {
            let row = residual.row_mut(k);
            let len = norm(row);
            if len <= ZERO_RESIDUAL {
                return Err(CsmError::ZeroRow(k));
            }
            row.iter_mut().for_each(|v| *v /= len);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let mut taken = vec![false; n];
    let mut selected = Vec::with_capacity(cfg.head_size);
    let mut scores = Vec::with_capacity(cfg.head_size);

    for _ in 0..cfg.head_size {
        let acts = project(&residual, concepts.embeddings(), &all);
        let variances = column_stats(&acts)?.variances;
        let (best, score) = variances
            .iter()
            .enumerate()
            .filter(|(i, _)| !taken[*i])
            .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((i, v)),
            })
            .expect("head_size <= N leaves a candidate");
        taken[best] = true;
        selected.push(best);
        scores.push(score);
        deflate(&mut residual, concepts.row(best), cfg.mode)?;
        observe(best, &residual);
    }
    Ok(SelectionResult {
        selected,
        scores,
        mode: cfg.mode,
    })
}

fn deflate(residual: &mut Matrix, w: &[f64], mode: DeflationMode) -> Result<()> {
    let w_sq = dot(w, w);
    for k in 0..residual.rows() {
        let row = residual.row_mut(k);
        let d = dot(row, w);
        let coeff = match mode {
            DeflationMode::LiteralCosine => {
                let len = norm(row);
                if len <= ZERO_RESIDUAL {
                    return Err(CsmError::Numerical(format!(
                        "image {k} has a zero residual; cosine deflation is undefined \
                         (use exact_projection)"
                    )));
                }
                d / len
            }
            DeflationMode::ExactProjection => d / w_sq,
        };
        for (v, wi) in row.iter_mut().zip(w) {
            *v -= coeff * wi;
        }
    }
    Ok(())
}
