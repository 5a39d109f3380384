//! Library routines checked against the scalar reference implementations in
//! `csm_core::oracles`.

use csm_core::annotator::{annotate, concept_stats, spearman, top_k_overlap, ActivationMatrix};
use csm_core::bundle::{load_bundle, save_bundle, EmbeddingBundle};
use csm_core::explain::{explain, intervene, Intervention};
use csm_core::fine::{
    extract_core, linear_objective, mask_objective, predict, train_core, train_gated, ColumnScaling,
    ConceptModel, Gate, LinearHead, MaskModel, TrainConfig,
};
use csm_core::matrix::Matrix;
use csm_core::oracles::{self, Lcg};
use csm_core::rough::{greedy_select, DeflationMode, RoughConfig};
use csm_core::{ConceptLibrary, ImageSet};

fn library(rng: &mut Lcg, n: usize, d: usize) -> ConceptLibrary {
    let rows: Vec<f32> = (0..n)
        .flat_map(|_| rng.unit_vector(d))
        .map(|v| v as f32)
        .collect();
    let names = (0..n).map(|i| format!("c{i}")).collect();
    ConceptLibrary::new(EmbeddingBundle::concepts(d, rows, names).unwrap()).unwrap()
}

fn images(rng: &mut Lcg, k: usize, d: usize) -> ImageSet {
    let rows: Vec<f32> = (0..k * d).map(|_| rng.signed() as f32).collect();
    ImageSet::new(EmbeddingBundle::images(d, rows).unwrap()).unwrap()
}

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(<[f64]>::to_vec).collect()
}

fn random_matrix(rng: &mut Lcg, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.signed()).collect())
}

fn random_model(rng: &mut Lcg, n_star: usize, classes: usize) -> ConceptModel {
    let acts = random_matrix(rng, 8, n_star);
    ConceptModel {
        core_indices: (0..n_star).collect(),
        concept_names: (0..n_star).map(|i| format!("c{i}")).collect(),
        class_names: (0..classes).map(|c| c.to_string()).collect(),
        head: LinearHead {
            weights: random_matrix(rng, classes, n_star),
            bias: rng.vector(classes),
        },
        display: ColumnScaling::fit(&acts),
        mask: None,
        config: TrainConfig::default(),
    }
}

#[test]
fn annotation_matches_scalar_loops() {
    let mut rng = Lcg(11);
    let lib = library(&mut rng, 7, 5);
    let imgs = images(&mut rng, 9, 5);
    let got = annotate(&lib, &imgs).unwrap();
    let want = oracles::annotate(&nested(lib.embeddings()), &nested(imgs.embeddings()));
    for (g, w) in got.values().iter_rows().zip(&want) {
        for (a, b) in g.iter().zip(w) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

#[test]
fn variances_match_two_pass_oracle() {
    let mut rng = Lcg(12);
    for _ in 0..10 {
        let (k, n) = (2 + rng.below(20), 1 + rng.below(6));
        let x = random_matrix(&mut rng, k, n);
        let acts = ActivationMatrix::from_features(x.clone()).unwrap();
        let stats = concept_stats(&acts).unwrap();
        let rows = nested(&x);
        for c in 0..x.cols() {
            let (m, v) = oracles::mean_variance(&oracles::column(&rows, c));
            assert!((stats.means[c] - m).abs() <= 1e-9 * m.abs().max(1.0));
            assert!((stats.variances[c] - v).abs() <= 1e-9 * v.abs().max(1e-12));
        }
    }
}

#[test]
fn spearman_with_ties_matches_oracle() {
    let mut rng = Lcg(13);
    for trial in 0..50 {
        let n = 3 + rng.below(30);
        // half the trials draw from a tiny value set to force ties
        let draw = |r: &mut Lcg| {
            if trial % 2 == 0 {
                r.below(4) as f64
            } else {
                r.signed()
            }
        };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let want = oracles::spearman(&a, &b);
        match spearman(&a, &b) {
            Ok(got) => assert!((got - want).abs() < 1e-12, "{got} vs {want}"),
            Err(_) => assert!(want.is_nan()),
        }
    }
}

#[test]
fn overlap_matches_set_oracle() {
    let mut rng = Lcg(14);
    for _ in 0..50 {
        let n = 2 + rng.below(20);
        let a: Vec<f64> = (0..n).map(|_| rng.below(5) as f64).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.signed()).collect();
        let k = 1 + rng.below(n);
        assert_eq!(top_k_overlap(&a, &b, k).unwrap(), oracles::overlap(&a, &b, k));
    }
}

#[test]
fn greedy_matches_oracle_on_small_fixture() {
    let mut rng = Lcg(15);
    let lib = library(&mut rng, 5, 6);
    let imgs = images(&mut rng, 4, 6);
    for (mode, exact) in [
        (DeflationMode::LiteralCosine, false),
        (DeflationMode::ExactProjection, true),
    ] {
        let cfg = RoughConfig {
            head_size: 2,
            mode,
            normalize_images: false,
        };
        let got = greedy_select(&lib, &imgs, &cfg).unwrap();
        let (sel, var) = oracles::greedy_select(
            &nested(lib.embeddings()),
            &nested(imgs.embeddings()),
            2,
            exact,
        );
        assert_eq!(got.selected, sel);
        for (a, b) in got.scores.iter().zip(&var) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

fn flat_params(mask: &[f64], head: &LinearHead) -> Vec<f64> {
    let mut p = mask.to_vec();
    p.extend_from_slice(head.weights.as_slice());
    p.extend_from_slice(&head.bias);
    p
}

fn split_params(p: &[f64], m: usize, c: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let mask = p[..m].to_vec();
    let weights = p[m..m + c * m].chunks(m).map(<[f64]>::to_vec).collect();
    let bias = p[m + c * m..].to_vec();
    (mask, weights, bias)
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = Lcg(16);
    let (k, m, c, lambda) = (6, 4, 3, 0.05);
    let x = random_matrix(&mut rng, k, m);
    let labels: Vec<usize> = (0..k).map(|i| i % c).collect();
    let model = MaskModel {
        head_indices: (0..m).collect(),
        mask_logits: rng.vector(m),
        head: LinearHead {
            weights: random_matrix(&mut rng, c, m),
            bias: rng.vector(c),
        },
    };
    let rows = nested(&x);

    let (loss, grad) = mask_objective(&x, &labels, &model, lambda).unwrap();
    let p = flat_params(&model.mask_logits, &model.head);
    let f = |q: &[f64]| {
        let (mask, w, b) = split_params(q, m, c);
        oracles::objective(&rows, &labels, Some(&mask), &w, &b, lambda)
    };
    assert!((loss - f(&p)).abs() < 1e-12);
    let numeric = oracles::central_differences(&p, 1e-4, f);
    let analytic = flat_params(&grad.mask_logits, &LinearHead {
        weights: grad.weights,
        bias: grad.bias,
    });
    assert!(oracles::max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);

    let (loss, grad) = linear_objective(&x, &labels, &model.head, lambda).unwrap();
    let p = flat_params(&[], &model.head);
    let f = |q: &[f64]| {
        let w: Vec<Vec<f64>> = q[..c * m].chunks(m).map(<[f64]>::to_vec).collect();
        oracles::objective(&rows, &labels, None, &w, &q[c * m..], lambda)
    };
    assert!((loss - f(&p)).abs() < 1e-12);
    let numeric = oracles::central_differences(&p, 1e-4, f);
    let analytic = flat_params(&[], &LinearHead {
        weights: grad.weights,
        bias: grad.bias,
    });
    assert!(oracles::max_relative_error(&analytic, &numeric, 1e-8) < 1e-4);
}

#[test]
fn extract_core_matches_sort_oracle() {
    let mut rng = Lcg(17);
    for _ in 0..20 {
        let m = 5 + rng.below(20);
        let mut model = MaskModel::zeros((0..m).collect(), 2);
        model.mask_logits = (0..m).map(|_| (rng.below(8) as f64) - 4.0).collect();
        let got = extract_core(&model, 5).unwrap();
        assert_eq!(got, oracles::top_k(&model.mask_logits, 5));
    }
}

#[test]
fn explanation_ranks_match_sort_oracle() {
    let mut rng = Lcg(18);
    for _ in 0..20 {
        let model = random_model(&mut rng, 6, 3);
        let a = rng.vector(6);
        let e = explain(&model, &a, 3, "x", None).unwrap();
        let z: Vec<f64> = (0..6)
            .map(|j| (a[j] - model.display.means[j]) / model.display.stds[j])
            .collect();
        let top: Vec<usize> = e.top.iter().map(|t| t.position).collect();
        assert_eq!(top, oracles::top_k(&z, 3));
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let bottom: Vec<usize> = e.bottom.iter().map(|t| t.position).collect();
        assert_eq!(bottom, oracles::top_k(&neg, 3));
    }
}

#[test]
fn zeroing_a_concept_removes_its_contribution() {
    let mut rng = Lcg(19);
    for _ in 0..100 {
        let model = random_model(&mut rng, 5, 4);
        let a = rng.vector(5);
        let j = rng.below(5);
        let before = model.logits(&a);
        let after = intervene(
            &model,
            &a,
            &[Intervention {
                image_id: "x".into(),
                position: j,
                value: 0.0,
            }],
        )
        .unwrap();
        for y in 0..4 {
            let want = -model.head.weights.get(y, j) * a[j];
            assert!((after.logits[y] - before[y] - want).abs() < 1e-7);
        }
    }
}

#[test]
fn batch_prediction_equals_row_by_row() {
    let mut rng = Lcg(20);
    let model = random_model(&mut rng, 4, 3);
    let x = random_matrix(&mut rng, 12, 4);
    let (labels, logits) = predict(&model, &x).unwrap();
    for k in 0..12 {
        let z = model.logits(x.row(k));
        assert_eq!(logits.row(k), z.as_slice());
        assert_eq!(labels[k], oracles::top_k(&z, 1)[0]);
    }
}

fn separable(rng: &mut Lcg) -> (ActivationMatrix, Vec<usize>) {
    let k = 20;
    let labels: Vec<usize> = (0..k).map(|i| i % 2).collect();
    let x: Vec<f64> = labels
        .iter()
        .flat_map(|&y| {
            let s = if y == 0 { 1.0 } else { -1.0 };
            vec![s + 0.2 * rng.signed(), 0.3 * rng.signed(), s * 0.5 + 0.1 * rng.signed()]
        })
        .collect();
    (
        ActivationMatrix::from_features(Matrix::from_vec(k, 3, x)).unwrap(),
        labels,
    )
}

#[test]
fn small_step_gradient_descent_never_increases_loss() {
    let mut rng = Lcg(21);
    let (acts, labels) = separable(&mut rng);
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 200,
        ..TrainConfig::gd()
    };
    let run = train_core(&acts, &labels, 2, &cfg).unwrap();
    assert_eq!(run.losses.len(), 201);
    assert!((run.losses[0] - 2f64.ln()).abs() < 1e-12);
    assert!(run.losses.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn separable_toy_is_fit_within_200_epochs() {
    let mut rng = Lcg(22);
    let (acts, labels) = separable(&mut rng);
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::default()
    };
    let model = train_core(&acts, &labels, 2, &cfg).unwrap().model;
    let (pred, _) = predict(&model, acts.values()).unwrap();
    assert_eq!(pred, labels);
}

#[test]
fn open_gate_trajectory_equals_plain_training() {
    let mut rng = Lcg(23);
    let x = random_matrix(&mut rng, 30, 6);
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let acts = ActivationMatrix::from_features(x).unwrap();
    for cfg in [TrainConfig::default(), TrainConfig::gd()] {
        let gated = train_gated(&acts, &labels, 3, &cfg, Gate::FrozenOpen).unwrap();
        let plain = train_core(&acts, &labels, 3, &cfg).unwrap();
        assert_eq!(gated.losses.len(), plain.losses.len());
        for (a, b) in gated.losses.iter().zip(&plain.losses) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}

#[test]
fn stronger_regularization_shrinks_weights() {
    let mut rng = Lcg(24);
    let (acts, labels) = separable(&mut rng);
    let norms: Vec<f64> = [0.0, 1.0, 1e3]
        .iter()
        .map(|&lambda| {
            let cfg = TrainConfig {
                lambda,
                learning_rate: 1e-4,
                epochs: 300,
                ..TrainConfig::gd()
            };
            train_core(&acts, &labels, 2, &cfg)
                .unwrap()
                .model
                .head
                .weights
                .frobenius_sq()
        })
        .collect();
    assert!(norms[0] > norms[1] && norms[1] > norms[2], "{norms:?}");
}

#[test]
fn image_bundle_round_trip_is_byte_identical() {
    let mut rng = Lcg(25);
    let rows: Vec<f32> = (0..40).map(|_| rng.signed() as f32).collect();
    let bundle = EmbeddingBundle::images(8, rows)
        .unwrap()
        .with_labels(vec![0, 2, 1, 1, 0], 3)
        .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_bundle(&bundle, dir.path()).unwrap();
    let back = load_bundle(dir.path()).unwrap();
    let bytes = |b: &EmbeddingBundle| -> Vec<u8> { b.rows.iter().flat_map(|v| v.to_le_bytes()).collect() };
    assert_eq!(bytes(&back), bytes(&bundle));
    assert_eq!(back, bundle);
}
