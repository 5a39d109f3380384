//! Pipeline behaviour on planted-concept synthetic data, where the informative
//! concepts are known by construction.

use csm_core::annotator::{annotate, annotate_subset, concept_stats, ActivationMatrix};
use csm_core::bundle::{generate_synthetic, EmbeddingBundle, SyntheticData, SyntheticSpec};
use csm_core::evaluation::{
    evaluate, few_shot, linear_probe, linear_probe_model, quantity_sweep, random_baseline,
};
use csm_core::explain::list_misclassified;
use csm_core::fine::{predict, train_core, train_mask, TrainConfig};
use csm_core::oracles;
use csm_core::pipeline::{fit_csm, CsmConfig};
use csm_core::rough::{DeflationMode, RoughConfig};
use csm_core::{ConceptLibrary, ImageSet};

fn spec(noise: f64) -> SyntheticSpec {
    SyntheticSpec {
        d: 32,
        num_concepts: 100,
        num_classes: 10,
        images_per_class: 50,
        num_informative: 8,
        noise_scale: noise,
        seed: 1,
    }
}

struct Fixture {
    data: SyntheticData,
    concepts: ConceptLibrary,
    train: ImageSet,
    test: ImageSet,
}

fn fixture(spec: &SyntheticSpec) -> Fixture {
    let data = generate_synthetic(spec).unwrap();
    Fixture {
        concepts: ConceptLibrary::new(data.concepts.clone()).unwrap(),
        train: ImageSet::new(data.train.clone()).unwrap(),
        test: ImageSet::new(data.test.clone()).unwrap(),
        data,
    }
}

fn csm_config(head: usize, n_star: usize) -> CsmConfig {
    CsmConfig {
        rough: RoughConfig {
            head_size: head,
            mode: DeflationMode::LiteralCosine,
            normalize_images: false,
        },
        n_star,
        train: TrainConfig::default(),
    }
}

fn rows_f64(b: &EmbeddingBundle) -> Vec<Vec<f64>> {
    (0..b.count())
        .map(|i| b.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect()
}

#[test]
fn planted_concepts_have_the_highest_variances() {
    let f = fixture(&spec(0.0));
    // brute force: scalar annotation and two-pass variances
    let acts = oracles::annotate(&rows_f64(&f.data.concepts), &rows_f64(&f.data.train));
    let variances: Vec<f64> = (0..f.concepts.len())
        .map(|i| oracles::mean_variance(&oracles::column(&acts, i)).1)
        .collect();
    let mut top = oracles::top_k(&variances, f.data.planted.len());
    top.sort_unstable();
    assert_eq!(top, f.data.planted);

    let stats = concept_stats(&annotate(&f.concepts, &f.train).unwrap()).unwrap();
    for (a, b) in stats.variances.iter().zip(&variances) {
        assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-12));
    }
}

#[test]
fn mask_prefers_planted_concepts() {
    let f = fixture(&spec(0.1));
    let head: Vec<usize> = (0..f.concepts.len()).collect();
    let acts = annotate_subset(&f.concepts, &head, &f.train).unwrap();
    let labels = f.train.labels().unwrap();
    let mask = train_mask(&acts, labels, 10, &TrainConfig::default()).unwrap().model;
    let gate = mask.gate();
    let (mut planted, mut other) = (Vec::new(), Vec::new());
    for (i, g) in gate.iter().enumerate() {
        if f.data.planted.contains(&i) {
            planted.push(*g);
        } else {
            other.push(*g);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&planted) > mean(&other),
        "planted {} vs other {}",
        mean(&planted),
        mean(&other)
    );
}

#[test]
fn full_pipeline_is_accurate_on_low_noise() {
    let f = fixture(&spec(0.05));
    let fit = fit_csm(&f.concepts, &f.train, &csm_config(50, 20)).unwrap();
    let report = evaluate(&fit.model, &f.test, &f.concepts).unwrap();
    assert!(report.accuracy >= 0.95, "accuracy {}", report.accuracy);
}

#[test]
fn random_concepts_do_worse_than_csm() {
    let f = fixture(&spec(0.1));
    let cfg = csm_config(50, 4);
    let fit = fit_csm(&f.concepts, &f.train, &cfg).unwrap();
    let csm = evaluate(&fit.model, &f.test, &f.concepts).unwrap().accuracy;
    let random: Vec<f64> = (0..10)
        .map(|seed| {
            random_baseline(&f.concepts, &f.train, &f.test, 4, &cfg.train, seed)
                .unwrap()
                .accuracy
        })
        .collect();
    let mean = random.iter().sum::<f64>() / random.len() as f64;
    println!("csm {csm} random mean {mean} {random:?}");
    assert!(csm > mean, "csm {csm} vs random {mean}");

    let again = random_baseline(&f.concepts, &f.train, &f.test, 4, &cfg.train, 3).unwrap();
    assert_eq!(again.accuracy, random[3]);
}

#[test]
fn random_baseline_with_all_concepts_matches_full_csm() {
    let small = SyntheticSpec {
        num_concepts: 12,
        d: 8,
        num_informative: 3,
        num_classes: 4,
        images_per_class: 6,
        ..spec(0.1)
    };
    let f = fixture(&small);
    let cfg = csm_config(12, 12);
    let fit = fit_csm(&f.concepts, &f.train, &cfg).unwrap();
    let mut core = fit.model.core_indices.clone();
    core.sort_unstable();
    assert_eq!(core, (0..12).collect::<Vec<_>>());
    let r = random_baseline(&f.concepts, &f.train, &f.test, 12, &cfg.train, 1).unwrap();
    assert!(r.accuracy >= 0.0);
}

#[test]
fn noiseless_linear_probe_is_perfect() {
    let f = fixture(&spec(0.0));
    let r = linear_probe(&f.train, &f.test, &TrainConfig::default()).unwrap();
    assert_eq!(r.accuracy, 1.0);
}

#[test]
fn linear_probe_equals_basis_concept_model() {
    let f = fixture(&spec(0.2));
    let d = f.train.dim();
    let mut rows = vec![0.0f32; d * d];
    for i in 0..d {
        rows[i * d + i] = 1.0;
    }
    let basis = ConceptLibrary::new(
        EmbeddingBundle::concepts(d, rows, (0..d).map(|i| format!("e{i}")).collect()).unwrap(),
    )
    .unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    let idx: Vec<usize> = (0..d).collect();
    let acts = annotate_subset(&basis, &idx, &f.train).unwrap();
    let concept_model = train_core(&acts, f.train.labels().unwrap(), 10, &cfg).unwrap().model;
    let probe_model = linear_probe_model(&f.train, &cfg).unwrap();

    let test_basis = annotate_subset(&basis, &idx, &f.test).unwrap();
    let test_raw = ActivationMatrix::from_features(f.test.embeddings().clone()).unwrap();
    let (pa, la) = predict(&concept_model, test_basis.values()).unwrap();
    let (pb, lb) = predict(&probe_model, test_raw.values()).unwrap();
    assert_eq!(pa, pb);
    for (a, b) in la.as_slice().iter().zip(lb.as_slice()) {
        assert!((a - b).abs() < 1e-6);
    }
    let probe = linear_probe(&f.train, &f.test, &cfg).unwrap();
    let concept_acc = pa
        .iter()
        .zip(f.test.labels().unwrap())
        .filter(|(p, y)| p == y)
        .count() as f64
        / pa.len() as f64;
    assert_eq!(probe.accuracy, concept_acc);
}

#[test]
fn quantity_sweep_grows_with_planted_concepts() {
    let f = fixture(&spec(0.1));
    let list: Vec<usize> = (1..=8).collect();
    let reports = quantity_sweep(&f.concepts, &f.train, &f.test, &list, &csm_config(50, 8)).unwrap();
    let acc: Vec<f64> = reports.iter().map(|r| r.accuracy).collect();
    println!("sweep {acc:?}");
    for w in acc.windows(2) {
        assert!(w[1] >= w[0] - 0.02, "sweep not nondecreasing: {acc:?}");
    }
    let dup = quantity_sweep(&f.concepts, &f.train, &f.test, &[3, 3], &csm_config(50, 8)).unwrap();
    assert_eq!(dup[0], dup[1]);
}

#[test]
fn sweep_with_full_head_matches_full_head_model() {
    let f = fixture(&spec(0.1));
    let cfg = csm_config(20, 20);
    let reports = quantity_sweep(&f.concepts, &f.train, &f.test, &[20], &cfg).unwrap();
    let fit = fit_csm(&f.concepts, &f.train, &cfg).unwrap();
    let direct = evaluate(&fit.model, &f.test, &f.concepts).unwrap();
    assert_eq!(reports, vec![direct]);
}

#[test]
fn few_shot_full_class_equals_full_data() {
    let small = SyntheticSpec {
        images_per_class: 6,
        ..spec(0.2)
    };
    let f = fixture(&small);
    let cfg = csm_config(30, 20);
    let (csm, probe) = few_shot(&f.concepts, &f.train, &f.test, 6, &cfg, 9).unwrap();
    let fit = fit_csm(&f.concepts, &f.train, &cfg).unwrap();
    assert_eq!(csm.accuracy, evaluate(&fit.model, &f.test, &f.concepts).unwrap().accuracy);
    assert_eq!(
        probe.accuracy,
        linear_probe(&f.train, &f.test, &cfg.train).unwrap().accuracy
    );
    assert!(few_shot(&f.concepts, &f.train, &f.test, 7, &cfg, 9).is_err());
}

#[test]
fn few_shot_concept_model_keeps_up_with_probe() {
    // wide embeddings, where the raw probe has many noise directions to fit
    let f = fixture(&SyntheticSpec {
        d: 512,
        num_concepts: 1000,
        ..spec(0.3)
    });
    let cfg = csm_config(50, 20);
    let mut rows = Vec::new();
    for seed in 0..5 {
        let (csm, probe) = few_shot(&f.concepts, &f.train, &f.test, 2, &cfg, seed).unwrap();
        rows.push((csm.accuracy, probe.accuracy));
    }
    println!("few-shot (csm, probe) {rows:?}");
    for (csm, probe) in rows {
        assert!(csm >= probe - 0.05, "csm {csm} probe {probe}");
    }
}

#[test]
fn misclassified_count_matches_accuracy() {
    let f = fixture(&spec(0.4));
    let fit = fit_csm(&f.concepts, &f.train, &csm_config(30, 6)).unwrap();
    let report = evaluate(&fit.model, &f.test, &f.concepts).unwrap();
    let wrong = list_misclassified(&fit.model, &f.test, &f.concepts).unwrap();
    let expected = ((1.0 - report.accuracy) * f.test.len() as f64).round() as usize;
    assert_eq!(wrong.len(), expected);
    assert!(wrong.windows(2).all(|w| w[0].id < w[1].id));

    let clean = fixture(&spec(0.0));
    let fit = fit_csm(&clean.concepts, &clean.train, &csm_config(30, 20)).unwrap();
    let acc = evaluate(&fit.model, &clean.test, &clean.concepts).unwrap().accuracy;
    assert_eq!(acc, 1.0);
    assert!(list_misclassified(&fit.model, &clean.test, &clean.concepts)
        .unwrap()
        .is_empty());
}
