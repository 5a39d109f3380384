//! Mask fine selection and the final concept model.
//!
//! Phase one trains a sigmoid gate `σ(m)` over the head-concept activations
//! jointly with a softmax-linear classifier:
//!
//! ```text
//! logits_k = Θ (σ(m) ⊙ a_k) + b
//! loss     = mean_k CE(softmax(logits_k), y_k) + λ ‖Θ‖²_F
//! ```
//!
//! The `N*` largest mask logits pick the core concepts. Phase two retrains the
//! same objective without a gate on the core activations only.
//!
//! Optimization is full-batch and starts from all zeros, so a run is fully
//! determined by the data and the [`TrainConfig`].

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annotator::{column_stats, top_k_indices, ActivationMatrix};
use crate::bundle::{decode_f32le, encode_f32le};
use crate::error::{CsmError, Result};
use crate::matrix::Matrix;

pub const MODEL_FILE: &str = "model.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    Adam,
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Gd => "gd",
            Optimizer::Adam => "adam",
        })
    }
}

impl FromStr for Optimizer {
    type Err = CsmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Optimizer::Gd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(CsmError::invalid(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the squared Frobenius penalty on the classifier weights.
    pub lambda: f64,
    /// Recorded with every model. Full-batch training from a zero start draws
    /// no random numbers, so it does not change the result.
    pub seed: u64,
    pub optimizer: Optimizer,
    /// Train on z-scored activations. The final model is folded back to raw
    /// activation scale, so prediction always takes raw activations.
    #[serde(default)]
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            learning_rate: 0.1,
            lambda: 1e-4,
            seed: 0,
            optimizer: Optimizer::Adam,
            standardize: false,
        }
    }
}

impl TrainConfig {
    /// Defaults for plain gradient descent (learning rate 1.0).
    pub fn gd() -> Self {
        Self {
            learning_rate: 1.0,
            optimizer: Optimizer::Gd,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CsmError::invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CsmError::invalid("learning rate must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CsmError::invalid("lambda must be >= 0"));
        }
        Ok(())
    }
}

/// How the gate in front of the classifier behaves during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    /// No gate at all (core retraining and linear probes).
    Absent,
    /// `σ(m)` with trainable logits.
    Learned,
    /// The gate is held at exactly 1 and never updated.
    FrozenOpen,
}

/// Classifier weights (`C x M`) and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(num_classes: usize, num_features: usize) -> Self {
        Self {
            weights: Matrix::zeros(num_classes, num_features),
            bias: vec![0.0; num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn logits(&self, features: &[f64]) -> Vec<f64> {
        (0..self.num_classes())
            .map(|c| {
                self.weights
                    .row(c)
                    .iter()
                    .zip(features)
                    .map(|(w, a)| w * a)
                    .sum::<f64>()
                    + self.bias[c]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskModel {
    /// Library indices of the head concepts, one per activation column.
    pub head_indices: Vec<usize>,
    pub mask_logits: Vec<f64>,
    pub head: LinearHead,
}

impl MaskModel {
    pub fn zeros(head_indices: Vec<usize>, num_classes: usize) -> Self {
        let m = head_indices.len();
        Self {
            head_indices,
            mask_logits: vec![0.0; m],
            head: LinearHead::zeros(num_classes, m),
        }
    }

    pub fn gate(&self) -> Vec<f64> {
        self.mask_logits.iter().map(|&v| sigmoid(v)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// Empty unless the gate is learned.
    pub mask_logits: Vec<f64>,
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Index of the largest value, ties to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_problem(x: &Matrix, labels: &[usize], num_classes: usize) -> Result<()> {
    if x.rows() == 0 {
        return Err(CsmError::invalid("training needs at least one sample"));
    }
    if labels.len() != x.rows() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} labels for {} samples",
            labels.len(),
            x.rows()
        )));
    }
    if num_classes == 0 {
        return Err(CsmError::invalid("num_classes must be >= 1"));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(CsmError::invalid(format!(
            "label {l} outside [0, {num_classes})"
        )));
    }
    Ok(())
}

/// Flat parameter layout: `[mask (M, learned gate only) | Θ (C*M) | b (C)]`.
struct Problem<'a> {
    x: &'a Matrix,
    labels: &'a [usize],
    num_classes: usize,
    lambda: f64,
    gate: Gate,
}

impl Problem<'_> {
    fn m(&self) -> usize {
        self.x.cols()
    }

    fn mask_len(&self) -> usize {
        if self.gate == Gate::Learned {
            self.m()
        } else {
            0
        }
    }

    fn len(&self) -> usize {
        self.mask_len() + self.num_classes * self.m() + self.num_classes
    }

    fn pack(&self, mask: &[f64], head: &LinearHead) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.len());
        if self.gate == Gate::Learned {
            p.extend_from_slice(mask);
        }
        p.extend_from_slice(head.weights.as_slice());
        p.extend_from_slice(&head.bias);
        p
    }

    fn unpack(&self, p: &[f64]) -> (Vec<f64>, LinearHead) {
        let (mask, rest) = p.split_at(self.mask_len());
        let (w, b) = rest.split_at(self.num_classes * self.m());
        (
            mask.to_vec(),
            LinearHead {
                weights: Matrix::from_vec(self.num_classes, self.m(), w.to_vec()),
                bias: b.to_vec(),
            },
        )
    }

    /// Objective value; fills `grad` (same layout as `p`) when given.
    fn eval(&self, p: &[f64], mut grad: Option<&mut [f64]>) -> f64 {
        let (m, c) = (self.m(), self.num_classes);
        let k_total = self.x.rows();
        let ml = self.mask_len();
        let gate: Option<Vec<f64>> = match self.gate {
            Gate::Absent => None,
            Gate::Learned => Some(p[..ml].iter().map(|&v| sigmoid(v)).collect()),
            Gate::FrozenOpen => Some(vec![1.0; m]),
        };
        let w = &p[ml..ml + c * m];
        let b = &p[ml + c * m..];
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut dgate = vec![0.0; if self.gate == Gate::Learned { m } else { 0 }];
        let mut feat = vec![0.0; m];
        let mut logits = vec![0.0; c];
        let inv_k = 1.0 / k_total as f64;
        let mut data_loss = 0.0;

        for k in 0..k_total {
            let row = self.x.row(k);
            match &gate {
                Some(g) => {
                    for ((f, a), gj) in feat.iter_mut().zip(row).zip(g) {
                        *f = gj * a;
                    }
                }
                None => feat.copy_from_slice(row),
            }
            for (cls, z) in logits.iter_mut().enumerate() {
                let wr = &w[cls * m..(cls + 1) * m];
                *z = wr.iter().zip(&feat).map(|(a, b)| a * b).sum::<f64>() + b[cls];
            }
            let zmax = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|z| (z - zmax).exp()).sum();
            let lse = zmax + sum_exp.ln();
            let y = self.labels[k];
            data_loss += lse - logits[y];

            if let Some(g) = grad.as_deref_mut() {
                for (cls, &z) in logits.iter().enumerate() {
                    let p_c = (z - lse).exp();
                    let dz = (p_c - if cls == y { 1.0 } else { 0.0 }) * inv_k;
                    let (gw, gb) = g[ml..].split_at_mut(c * m);
                    gb[cls] += dz;
                    let gw_row = &mut gw[cls * m..(cls + 1) * m];
                    for (gwj, fj) in gw_row.iter_mut().zip(&feat) {
                        *gwj += dz * fj;
                    }
                    if self.gate == Gate::Learned {
                        let wr = &w[cls * m..(cls + 1) * m];
                        for ((dg, wj), a) in dgate.iter_mut().zip(wr).zip(row) {
                            *dg += dz * wj * a;
                        }
                    }
                }
            }
        }

        let penalty: f64 = w.iter().map(|v| v * v).sum();
        if let Some(g) = grad {
            for (gwj, wj) in g[ml..ml + c * m].iter_mut().zip(w) {
                *gwj += 2.0 * self.lambda * wj;
            }
            if let Some(gate) = &gate {
                for j in 0..ml {
                    g[j] = dgate[j] * gate[j] * (1.0 - gate[j]);
                }
            }
        }
        data_loss * inv_k + self.lambda * penalty
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Runs full-batch optimization from `start`. Returns the final parameters and
/// the objective before the first step and after every step (`epochs + 1`
/// values).
fn optimize(problem: &Problem<'_>, start: Vec<f64>, cfg: &TrainConfig) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut p = start;
    let mut grad = vec![0.0; p.len()];
    let mut adam = Adam::new(p.len());
    let mut losses = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let loss = problem.eval(&p, Some(&mut grad));
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(CsmError::Numerical(format!(
                "non-finite objective at epoch {epoch}; lower the learning rate"
            )));
        }
        losses.push(loss);
        if epoch == cfg.epochs {
            break;
        }
        match cfg.optimizer {
            Optimizer::Gd => {
                for (pi, gi) in p.iter_mut().zip(&grad) {
                    *pi -= cfg.learning_rate * gi;
                }
            }
            Optimizer::Adam => adam.step(&mut p, &grad, cfg.learning_rate),
        }
    }
    Ok((p, losses))
}

/// Per-column z-score parameters. Zero-variance columns get std 1 and a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnScaling {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub zero_std: Vec<bool>,
}

impl ColumnScaling {
    pub fn fit(x: &Matrix) -> Self {
        let k = x.rows();
        let stats = if k >= 2 {
            column_stats(x).expect("k >= 2")
        } else {
            crate::annotator::ConceptStats {
                means: if k == 1 { x.row(0).to_vec() } else { vec![0.0; x.cols()] },
                variances: vec![0.0; x.cols()],
            }
        };
        let zero_std: Vec<bool> = stats.variances.iter().map(|&v| v <= 0.0).collect();
        let stds = stats
            .variances
            .iter()
            .map(|&v| if v > 0.0 { v.sqrt() } else { 1.0 })
            .collect();
        Self {
            means: stats.means,
            stds,
            zero_std,
        }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for k in 0..out.rows() {
            for ((v, m), s) in out.row_mut(k).iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    /// Turns a head trained on scaled inputs into one taking raw inputs.
    fn fold(&self, head: &LinearHead) -> LinearHead {
        let mut out = head.clone();
        for c in 0..head.num_classes() {
            let mut shift = 0.0;
            for j in 0..head.weights.cols() {
                let w = head.weights.get(c, j) / self.stds[j];
                out.weights.set(c, j, w);
                shift += w * self.means[j];
            }
            out.bias[c] -= shift;
        }
        out
    }
}

/// Objective and gradient of the gated model at `model`.
pub fn mask_objective(
    acts: &Matrix,
    labels: &[usize],
    model: &MaskModel,
    lambda: f64,
) -> Result<(f64, Gradient)> {
    check_problem(acts, labels, model.head.num_classes())?;
    if acts.cols() != model.mask_logits.len() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} activation columns for a mask of {}",
            acts.cols(),
            model.mask_logits.len()
        )));
    }
    let problem = Problem {
        x: acts,
        labels,
        num_classes: model.head.num_classes(),
        lambda,
        gate: Gate::Learned,
    };
    let p = problem.pack(&model.mask_logits, &model.head);
    let mut g = vec![0.0; p.len()];
    let loss = problem.eval(&p, Some(&mut g));
    let (mask, head) = problem.unpack(&g);
    Ok((
        loss,
        Gradient {
            mask_logits: mask,
            weights: head.weights,
            bias: head.bias,
        },
    ))
}

/// Objective and gradient of the ungated linear model at `head`.
pub fn linear_objective(
    acts: &Matrix,
    labels: &[usize],
    head: &LinearHead,
    lambda: f64,
) -> Result<(f64, Gradient)> {
    check_problem(acts, labels, head.num_classes())?;
    if acts.cols() != head.weights.cols() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} activation columns for {} weights per class",
            acts.cols(),
            head.weights.cols()
        )));
    }
    let problem = Problem {
        x: acts,
        labels,
        num_classes: head.num_classes(),
        lambda,
        gate: Gate::Absent,
    };
    let p = problem.pack(&[], head);
    let mut g = vec![0.0; p.len()];
    let loss = problem.eval(&p, Some(&mut g));
    let (_, gh) = problem.unpack(&g);
    Ok((
        loss,
        Gradient {
            mask_logits: Vec::new(),
            weights: gh.weights,
            bias: gh.bias,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct MaskTraining {
    pub model: MaskModel,
    pub losses: Vec<f64>,
}

/// Trains gate and classifier jointly on head activations.
pub fn train_mask(
    head_acts: &ActivationMatrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<MaskTraining> {
    train_gated(head_acts, labels, num_classes, cfg, Gate::Learned)
}

/// Like [`train_mask`] but with an explicit gate behaviour. With
/// [`Gate::FrozenOpen`] the mask logits are reported as `+inf`.
pub fn train_gated(
    head_acts: &ActivationMatrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
    gate: Gate,
) -> Result<MaskTraining> {
    cfg.validate()?;
    let raw = head_acts.values();
    check_problem(raw, labels, num_classes)?;
    let scaled;
    let x = if cfg.standardize {
        scaled = ColumnScaling::fit(raw).apply(raw);
        &scaled
    } else {
        raw
    };
    let problem = Problem {
        x,
        labels,
        num_classes,
        lambda: cfg.lambda,
        gate,
    };
    let init = MaskModel::zeros(head_acts.concept_indices().to_vec(), num_classes);
    let start = problem.pack(&init.mask_logits, &init.head);
    let (p, losses) = optimize(&problem, start, cfg)?;
    let (mask, head) = problem.unpack(&p);
    let mask_logits = match gate {
        Gate::Learned => mask,
        Gate::FrozenOpen => vec![f64::INFINITY; raw.cols()],
        Gate::Absent => vec![0.0; raw.cols()],
    };
    Ok(MaskTraining {
        model: MaskModel {
            head_indices: init.head_indices,
            mask_logits,
            head,
        },
        losses,
    })
}

/// Positions (into the head) of the `n_star` largest mask logits, largest
/// first, ties to the lower position.
pub fn extract_core(model: &MaskModel, n_star: usize) -> Result<Vec<usize>> {
    let m = model.mask_logits.len();
    if n_star == 0 || n_star > m {
        return Err(CsmError::invalid(format!(
            "n_star must be in [1, {m}], got {n_star}"
        )));
    }
    Ok(top_k_indices(&model.mask_logits, n_star))
}

/// Default core size: two concepts per class.
pub fn default_core_size(num_classes: usize) -> usize {
    2 * num_classes
}

/// Mask logits of the head concepts, kept with the final model for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSummary {
    pub head_indices: Vec<usize>,
    pub mask_logits: Vec<f64>,
}

/// The interpretable model: a linear classifier over core concept activations.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModel {
    pub core_indices: Vec<usize>,
    pub concept_names: Vec<String>,
    pub class_names: Vec<String>,
    pub head: LinearHead,
    /// Training-set activation statistics, used only to rank concepts in
    /// explanations.
    pub display: ColumnScaling,
    pub mask: Option<MaskSummary>,
    pub config: TrainConfig,
}

impl ConceptModel {
    pub fn n_star(&self) -> usize {
        self.core_indices.len()
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn with_names(mut self, concept_names: Vec<String>, class_names: Vec<String>) -> Result<Self> {
        if concept_names.len() != self.n_star() || class_names.len() != self.num_classes() {
            return Err(CsmError::DimensionMismatch(format!(
                "{} concept / {} class names for a model with {} concepts and {} classes",
                concept_names.len(),
                class_names.len(),
                self.n_star(),
                self.num_classes()
            )));
        }
        self.concept_names = concept_names;
        self.class_names = class_names;
        Ok(self)
    }

    pub fn logits(&self, acts: &[f64]) -> Vec<f64> {
        self.head.logits(acts)
    }
}

#[derive(Debug, Clone)]
pub struct CoreTraining {
    pub model: ConceptModel,
    pub losses: Vec<f64>,
}

/// Retrains a plain linear classifier on core activations.
pub fn train_core(
    core_acts: &ActivationMatrix,
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<CoreTraining> {
    cfg.validate()?;
    let raw = core_acts.values();
    check_problem(raw, labels, num_classes)?;
    let display = ColumnScaling::fit(raw);
    let scaled;
    let x = if cfg.standardize {
        scaled = display.apply(raw);
        &scaled
    } else {
        raw
    };
    let problem = Problem {
        x,
        labels,
        num_classes,
        lambda: cfg.lambda,
        gate: Gate::Absent,
    };
    let start = problem.pack(&[], &LinearHead::zeros(num_classes, raw.cols()));
    let (p, losses) = optimize(&problem, start, cfg)?;
    let (_, mut head) = problem.unpack(&p);
    if cfg.standardize {
        head = display.fold(&head);
    }
    let core_indices = core_acts.concept_indices().to_vec();
    Ok(CoreTraining {
        model: ConceptModel {
            concept_names: core_indices.iter().map(|i| format!("concept_{i}")).collect(),
            class_names: (0..num_classes).map(|c| c.to_string()).collect(),
            core_indices,
            head,
            display,
            mask: None,
            config: *cfg,
        },
        losses,
    })
}

/// Predicted classes (argmax, ties to the lower class) and logits per row.
pub fn predict(model: &ConceptModel, acts: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    if acts.cols() != model.n_star() {
        return Err(CsmError::DimensionMismatch(format!(
            "{} activation columns for a model with {} concepts",
            acts.cols(),
            model.n_star()
        )));
    }
    let mut logits = Matrix::zeros(acts.rows(), model.num_classes());
    let mut labels = Vec::with_capacity(acts.rows());
    for k in 0..acts.rows() {
        let z = model.logits(acts.row(k));
        labels.push(argmax(&z));
        logits.row_mut(k).copy_from_slice(&z);
    }
    Ok((labels, logits))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    num_classes: usize,
    n_star: usize,
    core_indices: Vec<usize>,
    concept_names: Vec<String>,
    class_names: Vec<String>,
    lambda: f64,
    seed: u64,
    train_config: TrainConfig,
    display_means: Vec<f64>,
    display_stds: Vec<f64>,
    display_zero_std: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<MaskSummary>,
}

impl ConceptModel {
    /// `model.json` text and `weights.bin` bytes (`Θ` row-major then bias, f32 LE).
    pub fn encode(&self) -> (String, Vec<u8>) {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            num_classes: self.num_classes(),
            n_star: self.n_star(),
            core_indices: self.core_indices.clone(),
            concept_names: self.concept_names.clone(),
            class_names: self.class_names.clone(),
            lambda: self.config.lambda,
            seed: self.config.seed,
            train_config: self.config,
            display_means: self.display.means.clone(),
            display_stds: self.display.stds.clone(),
            display_zero_std: self.display.zero_std.clone(),
            mask: self.mask.clone(),
        };
        let mut json = serde_json::to_string_pretty(&file).expect("model serializes");
        json.push('\n');
        let values: Vec<f32> = self
            .head
            .weights
            .as_slice()
            .iter()
            .chain(&self.head.bias)
            .map(|&v| v as f32)
            .collect();
        (json, encode_f32le(&values))
    }

    pub fn decode(json: &[u8], weights: &[u8]) -> Result<Self> {
        let file: ModelFile =
            serde_json::from_slice(json).map_err(|e| CsmError::format("model.json", e.to_string()))?;
        let bad = |detail: String| CsmError::format("model.json", detail);
        if file.version != MODEL_FORMAT_VERSION {
            return Err(bad(format!("unsupported version {}", file.version)));
        }
        let (n, c) = (file.n_star, file.num_classes);
        if n == 0 || c == 0 {
            return Err(bad("n_star and num_classes must be positive".into()));
        }
        for (what, len) in [
            ("core_indices", file.core_indices.len()),
            ("concept_names", file.concept_names.len()),
            ("display_means", file.display_means.len()),
            ("display_stds", file.display_stds.len()),
            ("display_zero_std", file.display_zero_std.len()),
        ] {
            if len != n {
                return Err(bad(format!("{what} has {len} entries, n_star is {n}")));
            }
        }
        if file.class_names.len() != c {
            return Err(bad(format!(
                "{} class names for {c} classes",
                file.class_names.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        if file.core_indices.iter().any(|i| !seen.insert(*i)) {
            return Err(bad("duplicate core index".into()));
        }
        if file.display_stds.iter().any(|&s| !(s > 0.0 && s.is_finite()))
            || file.display_means.iter().any(|m| !m.is_finite())
        {
            return Err(bad("display statistics must be finite with std > 0".into()));
        }
        if let Some(mask) = &file.mask {
            if mask.head_indices.len() != mask.mask_logits.len() {
                return Err(bad("mask head indices and logits differ in length".into()));
            }
        }
        let expected = n
            .checked_mul(c)
            .and_then(|v| v.checked_add(c))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| bad("n_star * num_classes overflows".into()))?;
        if weights.len() != expected {
            return Err(CsmError::DimensionMismatch(format!(
                "weights.bin has {} bytes, expected {expected}",
                weights.len()
            )));
        }
        let values: Vec<f64> = decode_f32le(weights).into_iter().map(f64::from).collect();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(CsmError::NonFinite(pos));
        }
        let (w, b) = values.split_at(n * c);
        let mut config = file.train_config;
        config.lambda = file.lambda;
        config.seed = file.seed;
        Ok(ConceptModel {
            core_indices: file.core_indices,
            concept_names: file.concept_names,
            class_names: file.class_names,
            head: LinearHead {
                weights: Matrix::from_vec(c, n, w.to_vec()),
                bias: b.to_vec(),
            },
            display: ColumnScaling {
                means: file.display_means,
                stds: file.display_stds,
                zero_std: file.display_zero_std,
            },
            mask: file.mask,
            config,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| CsmError::io(dir, e))?;
        let (json, weights) = self.encode();
        let p = dir.join(MODEL_FILE);
        fs::write(&p, json).map_err(|e| CsmError::io(&p, e))?;
        let p = dir.join(WEIGHTS_FILE);
        fs::write(&p, weights).map_err(|e| CsmError::io(&p, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(MODEL_FILE);
        let json = fs::read(&p).map_err(|e| CsmError::io(&p, e))?;
        let p = dir.join(WEIGHTS_FILE);
        let weights = fs::read(&p).map_err(|e| CsmError::io(&p, e))?;
        Self::decode(&json, &weights)
    }
}
