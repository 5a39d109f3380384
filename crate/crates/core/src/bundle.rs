//! On-disk embedding bundles.
//!
//! A bundle is a directory holding:
//!
//! - `meta.json`: `version` (=1), `kind` (`"concepts"` | `"images"`), `d`, `count`,
//!   `dtype` (`"f32le"`) and an optional `num_classes`.
//! - `embeddings.bin`: `count * d` little-endian `f32`, row-major, no header.
//! - `names.txt` (optional): one name per line. Concept names for concept bundles,
//!   class names (`num_classes` lines) for image bundles.
//! - `labels.bin` (optional, images only): `count` little-endian `u32`.
//! - `ids.txt` (optional, images only): one identifier per line.
//!
//! Concept rows are normalized by whoever exports them; loading only verifies.
//! Image rows are kept as exported.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CsmError, Result};
use crate::matrix::Matrix;

pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32LE: &str = "f32le";
/// Allowed deviation of a concept row norm from 1.
pub const CONCEPT_NORM_TOLERANCE: f64 = 1e-4;

pub const META_FILE: &str = "meta.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.bin";
pub const NAMES_FILE: &str = "names.txt";
pub const LABELS_FILE: &str = "labels.bin";
pub const IDS_FILE: &str = "ids.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BundleKind {
    Concepts,
    Images,
}

/// Contents of `meta.json`.
///
/// `kind` is absent for bare matrices such as exported activations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleMeta {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<BundleKind>,
    pub d: usize,
    pub count: usize,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl BundleMeta {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let meta: BundleMeta = serde_json::from_slice(bytes)
            .map_err(|e| CsmError::format("meta.json", e.to_string()))?;
        if meta.version != FORMAT_VERSION {
            return Err(CsmError::format(
                "meta.json",
                format!("unsupported version {}", meta.version),
            ));
        }
        if meta.dtype != DTYPE_F32LE {
            return Err(CsmError::format(
                "meta.json",
                format!("unsupported dtype {:?}", meta.dtype),
            ));
        }
        if meta.d == 0 || meta.count == 0 {
            return Err(CsmError::format("meta.json", "d and count must be positive"));
        }
        Ok(meta)
    }

    fn payload_len(&self) -> Result<usize> {
        self.count
            .checked_mul(self.d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| CsmError::format("meta.json", "count * d overflows"))
    }

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("meta serializes");
        s.push('\n');
        s
    }
}

/// An embedding matrix with its optional side tables.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBundle {
    pub kind: BundleKind,
    pub d: usize,
    /// `count * d` values, row-major.
    pub rows: Vec<f32>,
    /// Concept names, or class names for image bundles.
    pub names: Option<Vec<String>>,
    pub labels: Option<Vec<u32>>,
    pub num_classes: Option<usize>,
    pub ids: Option<Vec<String>>,
}

impl EmbeddingBundle {
    pub fn concepts(d: usize, rows: Vec<f32>, names: Vec<String>) -> Result<Self> {
        let b = Self {
            kind: BundleKind::Concepts,
            d,
            rows,
            names: Some(names),
            labels: None,
            num_classes: None,
            ids: None,
        };
        b.validate()?;
        Ok(b)
    }

    /// Unlabelled image bundle; attach labels and ids with the `with_*` methods.
    pub fn images(d: usize, rows: Vec<f32>) -> Result<Self> {
        let b = Self {
            kind: BundleKind::Images,
            d,
            rows,
            names: None,
            labels: None,
            num_classes: None,
            ids: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_labels(mut self, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        self.labels = Some(labels);
        self.num_classes = Some(num_classes);
        self.validate()?;
        Ok(self)
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if self.num_classes.is_none() {
            self.num_classes = Some(names.len());
        }
        self.names = Some(names);
        self.validate()?;
        Ok(self)
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        self.ids = Some(ids);
        self.validate()?;
        Ok(self)
    }

    pub fn count(&self) -> usize {
        self.rows.len().checked_div(self.d).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.rows[i * self.d..(i + 1) * self.d]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.count(),
            self.d,
            self.rows.iter().map(|&v| f64::from(v)).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.rows.is_empty() {
            return Err(CsmError::DimensionMismatch(
                "bundle must have d >= 1 and at least one row".into(),
            ));
        }
        if !self.rows.len().is_multiple_of(self.d) {
            return Err(CsmError::DimensionMismatch(format!(
                "{} values is not a multiple of d={}",
                self.rows.len(),
                self.d
            )));
        }
        if let Some(pos) = self.rows.iter().position(|v| !v.is_finite()) {
            return Err(CsmError::NonFinite(pos));
        }
        let count = self.count();
        if let Some(names) = &self.names {
            check_lines("names", names)?;
        }
        match self.kind {
            BundleKind::Concepts => {
                let names = self
                    .names
                    .as_ref()
                    .ok_or_else(|| CsmError::format("concept bundle", "names are required"))?;
                if names.len() != count {
                    return Err(CsmError::DimensionMismatch(format!(
                        "{} names for {} concepts",
                        names.len(),
                        count
                    )));
                }
                if self.labels.is_some() || self.ids.is_some() {
                    return Err(CsmError::format(
                        "concept bundle",
                        "labels and ids are only valid for image bundles",
                    ));
                }
                for i in 0..count {
                    let n = row_norm(self.row(i));
                    if (n - 1.0).abs() > CONCEPT_NORM_TOLERANCE {
                        return Err(CsmError::NormViolation { row: i, norm: n });
                    }
                }
            }
            BundleKind::Images => {
                for i in 0..count {
                    if self.row(i).iter().all(|&v| v == 0.0) {
                        return Err(CsmError::ZeroRow(i));
                    }
                }
                if let (Some(names), Some(nc)) = (&self.names, self.num_classes) {
                    if names.len() != nc {
                        return Err(CsmError::DimensionMismatch(format!(
                            "{} class names for {} classes",
                            names.len(),
                            nc
                        )));
                    }
                }
                if let Some(labels) = &self.labels {
                    let nc = self.num_classes.ok_or_else(|| {
                        CsmError::format("image bundle", "labels need num_classes")
                    })?;
                    if labels.len() != count {
                        return Err(CsmError::DimensionMismatch(format!(
                            "{} labels for {} images",
                            labels.len(),
                            count
                        )));
                    }
                    if let Some((row, &label)) =
                        labels.iter().enumerate().find(|(_, &l)| l as usize >= nc)
                    {
                        return Err(CsmError::LabelOutOfRange {
                            row,
                            label,
                            num_classes: nc,
                        });
                    }
                }
                if let Some(ids) = &self.ids {
                    check_lines("ids", ids)?;
                    if ids.len() != count {
                        return Err(CsmError::DimensionMismatch(format!(
                            "{} ids for {} images",
                            ids.len(),
                            count
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn meta(&self) -> BundleMeta {
        BundleMeta {
            version: FORMAT_VERSION,
            kind: Some(self.kind),
            d: self.d,
            count: self.count(),
            dtype: DTYPE_F32LE.to_string(),
            num_classes: self.num_classes,
        }
    }
}

fn row_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt()
}

fn check_lines(what: &str, items: &[String]) -> Result<()> {
    if let Some(bad) = items.iter().find(|s| s.contains(['\n', '\r'])) {
        return Err(CsmError::invalid(format!(
            "{what} entry {bad:?} contains a line break"
        )));
    }
    Ok(())
}

/// Raw file contents of a bundle directory, for decoding without touching the
/// filesystem.
#[derive(Debug, Clone, Copy, Default)]
pub struct BundleBytes<'a> {
    pub meta: &'a [u8],
    pub embeddings: &'a [u8],
    pub names: Option<&'a [u8]>,
    pub labels: Option<&'a [u8]>,
    pub ids: Option<&'a [u8]>,
}

pub fn decode_f32le(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn decode_u32le(bytes: &[u8]) -> Vec<u32> {
    bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn encode_f32le(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn decode_lines(what: &'static str, bytes: &[u8]) -> Result<Vec<String>> {
    let text = std::str::from_utf8(bytes).map_err(|e| CsmError::format(what, e.to_string()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Decodes and validates a bundle from in-memory file contents.
pub fn decode_bundle(bytes: BundleBytes<'_>) -> Result<EmbeddingBundle> {
    let meta = BundleMeta::parse(bytes.meta)?;
    let kind = meta
        .kind
        .ok_or_else(|| CsmError::format("meta.json", "missing kind"))?;
    let expected = meta.payload_len()?;
    if bytes.embeddings.len() != expected {
        return Err(CsmError::DimensionMismatch(format!(
            "embeddings.bin has {} bytes, descriptor implies {} ({} x {} f32)",
            bytes.embeddings.len(),
            expected,
            meta.count,
            meta.d
        )));
    }
    let rows = decode_f32le(bytes.embeddings);
    let names = bytes
        .names
        .map(|b| decode_lines("names.txt", b))
        .transpose()?;
    let labels = match bytes.labels {
        Some(b) => {
            if b.len() != meta.count * 4 {
                return Err(CsmError::DimensionMismatch(format!(
                    "labels.bin has {} bytes, expected {}",
                    b.len(),
                    meta.count * 4
                )));
            }
            Some(decode_u32le(b))
        }
        None => None,
    };
    let ids = bytes.ids.map(|b| decode_lines("ids.txt", b)).transpose()?;

    let mut num_classes = meta.num_classes;
    if kind == BundleKind::Images && num_classes.is_none() {
        num_classes = match (&names, &labels) {
            (Some(n), _) => Some(n.len()),
            (None, Some(l)) => l.iter().max().map(|&m| m as usize + 1),
            (None, None) => None,
        };
    }
    let bundle = EmbeddingBundle {
        kind,
        d: meta.d,
        rows,
        names,
        labels,
        num_classes,
        ids,
    };
    bundle.validate()?;
    Ok(bundle)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CsmError::io(path, e))
}

fn read_optional(path: &Path) -> Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(b) => Ok(Some(b)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CsmError::io(path, e)),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CsmError::io(path, e))
}

pub fn load_bundle(dir: impl AsRef<Path>) -> Result<EmbeddingBundle> {
    let dir = dir.as_ref();
    let meta = read_file(&dir.join(META_FILE))?;
    let embeddings = read_file(&dir.join(EMBEDDINGS_FILE))?;
    let names = read_optional(&dir.join(NAMES_FILE))?;
    let labels = read_optional(&dir.join(LABELS_FILE))?;
    let ids = read_optional(&dir.join(IDS_FILE))?;
    decode_bundle(BundleBytes {
        meta: &meta,
        embeddings: &embeddings,
        names: names.as_deref(),
        labels: labels.as_deref(),
        ids: ids.as_deref(),
    })
}

fn join_lines(items: &[String]) -> String {
    let mut s = String::new();
    for item in items {
        s.push_str(item);
        s.push('\n');
    }
    s
}

/// Writes `bundle` into `dir`, creating the directory if needed. Stale optional
/// files from an earlier bundle are removed.
pub fn save_bundle(bundle: &EmbeddingBundle, dir: impl AsRef<Path>) -> Result<()> {
    bundle.validate()?;
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CsmError::io(dir, e))?;
    write_file(&dir.join(META_FILE), bundle.meta().to_json().as_bytes())?;
    write_file(&dir.join(EMBEDDINGS_FILE), &encode_f32le(&bundle.rows))?;

    let optional: [(&str, Option<Vec<u8>>); 3] = [
        (
            NAMES_FILE,
            bundle
                .names
                .as_ref()
                .filter(|n| !n.is_empty())
                .map(|n| join_lines(n).into_bytes()),
        ),
        (
            LABELS_FILE,
            bundle
                .labels
                .as_ref()
                .map(|l| l.iter().flat_map(|v| v.to_le_bytes()).collect()),
        ),
        (
            IDS_FILE,
            bundle.ids.as_ref().map(|ids| join_lines(ids).into_bytes()),
        ),
    ];
    for (name, content) in optional {
        let path = dir.join(name);
        match content {
            Some(bytes) => write_file(&path, &bytes)?,
            None => match fs::remove_file(&path) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                Err(e) => return Err(CsmError::io(&path, e)),
            },
        }
    }
    Ok(())
}

/// Writes a bare matrix (e.g. activations) in bundle layout, without a `kind`.
pub fn save_matrix(matrix: &Matrix, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| CsmError::io(dir, e))?;
    let meta = BundleMeta {
        version: FORMAT_VERSION,
        kind: None,
        d: matrix.cols(),
        count: matrix.rows(),
        dtype: DTYPE_F32LE.to_string(),
        num_classes: None,
    };
    let values: Vec<f32> = matrix.as_slice().iter().map(|&v| v as f32).collect();
    write_file(&dir.join(META_FILE), meta.to_json().as_bytes())?;
    write_file(&dir.join(EMBEDDINGS_FILE), &encode_f32le(&values))
}

pub fn load_matrix(dir: impl AsRef<Path>) -> Result<Matrix> {
    let dir = dir.as_ref();
    let meta = BundleMeta::parse(&read_file(&dir.join(META_FILE))?)?;
    let payload = read_file(&dir.join(EMBEDDINGS_FILE))?;
    if payload.len() != meta.payload_len()? {
        return Err(CsmError::DimensionMismatch(format!(
            "embeddings.bin has {} bytes, descriptor implies {}",
            payload.len(),
            meta.payload_len()?
        )));
    }
    let values: Vec<f64> = decode_f32le(&payload).into_iter().map(f64::from).collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(CsmError::NonFinite(pos));
    }
    Ok(Matrix::from_vec(meta.count, meta.d, values))
}

/// Parameters of a planted-concept synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub d: usize,
    pub num_concepts: usize,
    pub num_classes: usize,
    pub images_per_class: usize,
    pub num_informative: usize,
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.num_concepts == 0 || self.num_classes == 0 {
            return Err(CsmError::invalid(
                "d, num_concepts and num_classes must be positive",
            ));
        }
        if self.num_informative == 0 || self.num_informative > self.num_concepts {
            return Err(CsmError::invalid(
                "num_informative must be in [1, num_concepts]",
            ));
        }
        if self.num_informative > self.d {
            return Err(CsmError::invalid(
                "num_informative cannot exceed d (planted concepts are orthonormal)",
            ));
        }
        if self.images_per_class == 0 {
            return Err(CsmError::invalid("images_per_class must be >= 1"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(CsmError::invalid("noise_scale must be finite and >= 0"));
        }
        let patterns = 1u128.checked_shl(self.num_informative as u32).unwrap_or(u128::MAX);
        if self.num_informative < 128 && self.num_classes as u128 > patterns {
            return Err(CsmError::invalid(format!(
                "{} classes exceed the {} sign patterns over {} informative concepts",
                self.num_classes, patterns, self.num_informative
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub concepts: EmbeddingBundle,
    pub train: EmbeddingBundle,
    pub test: EmbeddingBundle,
    /// Library indices of the planted concepts, ascending.
    pub planted: Vec<usize>,
}

fn gaussian_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Builds a concept library plus train/test image sets in which exactly the
/// planted concepts carry class signal.
///
/// Concepts are random unit vectors; the planted ones are additionally made
/// orthonormal to each other. Every class gets a distinct ±1 sign pattern over
/// the planted concepts, drawn in complementary pairs (a pattern and its
/// negation) so each planted concept's signs average to zero over an even
/// number of classes. An image is the normalized signed sum of the planted
/// concept vectors plus `noise_scale` times isotropic Gaussian noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d;

    let mut concept_rows = Vec::with_capacity(spec.num_concepts);
    for _ in 0..spec.num_concepts {
        let mut v = gaussian_vector(&mut rng, d);
        while v.iter().all(|&x| x == 0.0) {
            v = gaussian_vector(&mut rng, d);
        }
        normalize(&mut v);
        concept_rows.push(v);
    }

    let mut planted = index::sample(&mut rng, spec.num_concepts, spec.num_informative).into_vec();
    planted.sort_unstable();
    orthonormalize(&mut concept_rows, &planted, &mut rng);

    let mut seen = HashSet::new();
    let mut patterns: Vec<Vec<bool>> = Vec::with_capacity(spec.num_classes);
    while patterns.len() < spec.num_classes {
        let p: Vec<bool> = (0..spec.num_informative).map(|_| rng.random()).collect();
        let flipped: Vec<bool> = p.iter().map(|b| !b).collect();
        let pair_fits = spec.num_classes - patterns.len() >= 2;
        if pair_fits && !seen.contains(&p) && !seen.contains(&flipped) && p != flipped {
            seen.insert(p.clone());
            seen.insert(flipped.clone());
            patterns.push(p);
            patterns.push(flipped);
        } else if !pair_fits && seen.insert(p.clone()) {
            patterns.push(p);
        }
    }

    let prototypes: Vec<Vec<f64>> = patterns
        .iter()
        .map(|signs| {
            let mut v = vec![0.0; d];
            for (&concept, &positive) in planted.iter().zip(signs) {
                let s = if positive { 1.0 } else { -1.0 };
                for (acc, w) in v.iter_mut().zip(&concept_rows[concept]) {
                    *acc += s * w;
                }
            }
            normalize(&mut v);
            v
        })
        .collect();

    let concept_values: Vec<f32> = concept_rows.iter().flatten().map(|&v| v as f32).collect();
    let width = digits(spec.num_concepts);
    let concept_names = (0..spec.num_concepts)
        .map(|i| format!("concept_{i:0width$}"))
        .collect();
    let concepts = EmbeddingBundle::concepts(d, concept_values, concept_names)?;

    let mut split = |prefix: &str| -> Result<EmbeddingBundle> {
        let total = spec.num_classes * spec.images_per_class;
        let width = digits(total);
        let mut rows = Vec::with_capacity(total * d);
        let mut labels = Vec::with_capacity(total);
        for (class, proto) in prototypes.iter().enumerate() {
            for _ in 0..spec.images_per_class {
                for &p in proto {
                    let noise: f64 = rng.sample(StandardNormal);
                    rows.push((p + spec.noise_scale * noise) as f32);
                }
                labels.push(class as u32);
            }
        }
        let ids = (0..total).map(|i| format!("{prefix}_{i:0width$}")).collect();
        let class_names = (0..spec.num_classes).map(|c| format!("class_{c}")).collect();
        EmbeddingBundle::images(d, rows)?
            .with_labels(labels, spec.num_classes)?
            .with_class_names(class_names)?
            .with_ids(ids)
    };
    let train = split("train")?;
    let test = split("test")?;

    Ok(SyntheticData {
        concepts,
        train,
        test,
        planted,
    })
}

/// Gram-Schmidt over the listed rows, redrawing any row that collapses.
fn orthonormalize(rows: &mut [Vec<f64>], which: &[usize], rng: &mut ChaCha8Rng) {
    for (pos, &i) in which.iter().enumerate() {
        loop {
            let mut v = rows[i].clone();
            for &j in &which[..pos] {
                let proj: f64 = v.iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                for (x, w) in v.iter_mut().zip(&rows[j]) {
                    *x -= proj * w;
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                rows[i] = v;
                break;
            }
            rows[i] = gaussian_vector(rng, rows[i].len());
        }
    }
}

fn digits(n: usize) -> usize {
    n.saturating_sub(1).max(1).to_string().len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_concepts() -> EmbeddingBundle {
        let rows = vec![
            1.0, 0.0, 0.0, 0.0, //
            0.0, 0.6, 0.8, 0.0, //
            0.5, 0.5, 0.5, 0.5,
        ];
        EmbeddingBundle::concepts(4, rows, vec!["dog".into(), "sea".into(), "furry".into()])
            .unwrap()
    }

    #[test]
    fn concept_bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let b = unit_concepts();
        save_bundle(&b, dir.path()).unwrap();
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.names.as_ref().unwrap().len(), 3);
        for i in 0..3 {
            assert!((row_norm(back.row(i)) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn truncated_payload_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&unit_concepts(), dir.path()).unwrap();
        let path = dir.path().join(EMBEDDINGS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(CsmError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn short_concept_row_is_norm_violation() {
        let err = EmbeddingBundle::concepts(2, vec![0.5, 0.0], vec!["half".into()]).unwrap_err();
        assert!(matches!(err, CsmError::NormViolation { row: 0, .. }));
    }

    #[test]
    fn missing_meta_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path()), Err(CsmError::Io { .. })));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let meta = br#"{"version":1,"kind":"images","d":2,"count":1,"dtype":"f32le"}"#;
        let payload = encode_f32le(&[1.0, f32::NAN]);
        let err = decode_bundle(BundleBytes {
            meta,
            embeddings: &payload,
            ..Default::default()
        })
        .unwrap_err();
        assert!(matches!(err, CsmError::NonFinite(1)));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let err = EmbeddingBundle::images(1, vec![1.0, 2.0])
            .unwrap()
            .with_labels(vec![0, 3], 3)
            .unwrap_err();
        assert!(matches!(err, CsmError::LabelOutOfRange { row: 1, label: 3, .. }));
    }

    #[test]
    fn zero_image_row_rejected() {
        assert!(matches!(
            EmbeddingBundle::images(2, vec![1.0, 0.0, 0.0, 0.0]),
            Err(CsmError::ZeroRow(1))
        ));
    }

    #[test]
    fn image_bundle_without_names_writes_no_names_file() {
        let dir = tempfile::tempdir().unwrap();
        let b = EmbeddingBundle::images(2, vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .with_labels(vec![1, 0], 2)
            .unwrap();
        save_bundle(&b, dir.path()).unwrap();
        assert!(!dir.path().join(NAMES_FILE).exists());
        let meta = fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        assert!(!meta.contains("names"));
        let back = load_bundle(dir.path()).unwrap();
        assert_eq!(back.labels, Some(vec![1, 0]));
    }

    #[test]
    fn unknown_meta_field_rejected() {
        let meta = br#"{"version":1,"kind":"images","d":1,"count":1,"dtype":"f32le","extra":1}"#;
        assert!(BundleMeta::parse(meta).is_err());
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let meta = format!(
            r#"{{"version":1,"kind":"images","d":{},"count":{},"dtype":"f32le"}}"#,
            usize::MAX,
            usize::MAX
        );
        assert!(decode_bundle(BundleBytes {
            meta: meta.as_bytes(),
            embeddings: &[],
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn matrix_round_trip_has_no_kind() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_rows(&[vec![0.5, -1.25], vec![2.0, 3.0]]);
        save_matrix(&m, dir.path()).unwrap();
        let meta = fs::read_to_string(dir.path().join(META_FILE)).unwrap();
        assert!(!meta.contains("kind"));
        assert_eq!(load_matrix(dir.path()).unwrap(), m);
        assert!(load_bundle(dir.path()).is_err());
    }

    fn spec(noise: f64) -> SyntheticSpec {
        SyntheticSpec {
            d: 16,
            num_concepts: 20,
            num_classes: 4,
            images_per_class: 3,
            num_informative: 3,
            noise_scale: noise,
            seed: 11,
        }
    }

    #[test]
    fn noiseless_synthetic_classes_are_single_points() {
        let data = generate_synthetic(&spec(0.0)).unwrap();
        let labels = data.train.labels.as_ref().unwrap();
        for i in 0..data.train.count() {
            for j in 0..data.train.count() {
                if labels[i] == labels[j] {
                    assert_eq!(data.train.row(i), data.train.row(j));
                } else {
                    assert_ne!(data.train.row(i), data.train.row(j));
                }
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = generate_synthetic(&spec(0.2)).unwrap();
        let b = generate_synthetic(&spec(0.2)).unwrap();
        assert_eq!(a.concepts, b.concepts);
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.planted, b.planted);
        let c = generate_synthetic(&SyntheticSpec { seed: 12, ..spec(0.2) }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn too_many_classes_for_sign_patterns() {
        let s = SyntheticSpec {
            num_classes: 9,
            ..spec(0.0)
        };
        assert!(matches!(generate_synthetic(&s), Err(CsmError::InvalidArgument(_))));
    }
}
