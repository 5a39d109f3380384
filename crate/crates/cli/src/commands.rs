use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use csm_core::annotator::{annotate, concept_stats, spearman, top_k_overlap};
use csm_core::bundle::{generate_synthetic, load_bundle, save_bundle, save_matrix, SyntheticSpec};
use csm_core::evaluation::{
    core_activations, evaluate, few_shot, linear_probe, quantity_sweep, random_baseline,
    reports_to_csv, EvalReport,
};
use csm_core::explain::{auto_debug_eval, explain, intervene, DebugStrategy, Intervention};
use csm_core::fine::{default_core_size, ConceptModel};
use csm_core::pipeline::{finish_from_mask, train_head_mask, CsmConfig};
use csm_core::rough::{greedy_select, parse_selection_tsv, RoughConfig};
use csm_core::{ConceptLibrary, ImageSet};

use crate::args::*;
use crate::views::{explanation_view, to_json_pretty};

pub fn load_concepts(path: &Path) -> Result<ConceptLibrary> {
    let bundle = load_bundle(path).with_context(|| format!("loading concepts {}", path.display()))?;
    Ok(ConceptLibrary::new(bundle)?)
}

pub fn load_images(path: &Path) -> Result<ImageSet> {
    let bundle = load_bundle(path).with_context(|| format!("loading images {}", path.display()))?;
    Ok(ImageSet::new(bundle)?)
}

pub fn load_model(path: &Path) -> Result<ConceptModel> {
    ConceptModel::load(path).with_context(|| format!("loading model {}", path.display()))
}

/// Writes to `path`, or to stdout when there is none.
fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn rough_config(opts: &RoughOpts, library_size: usize) -> RoughConfig {
    let mut cfg = RoughConfig::for_library(library_size);
    if let Some(m) = opts.m {
        cfg.head_size = m;
    }
    cfg.mode = opts.mode.into();
    cfg.normalize_images = opts.normalize_images;
    cfg
}

fn class_count(images: &ImageSet) -> Result<usize> {
    images
        .num_classes()
        .ok_or_else(|| anyhow!("training bundle has no num_classes"))
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate(a) => validate(&a),
        Command::Synth(a) => synth(&a),
        Command::Stats(a) => stats(&a),
        Command::Rough(a) => rough(&a),
        Command::Fine(a) => fine(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep(&a),
        Command::Fewshot(a) => fewshot(&a),
        Command::Explain(a) => explain_cmd(&a),
        Command::DebugEval(a) => debug_eval(&a),
        Command::Serve(a) => crate::service::serve_blocking(&a),
    }
}

fn validate(a: &ValidateArgs) -> Result<()> {
    for path in &a.bundles {
        let b = load_bundle(path).with_context(|| format!("{} is not a valid bundle", path.display()))?;
        let kind = match b.kind {
            csm_core::bundle::BundleKind::Concepts => "concepts",
            csm_core::bundle::BundleKind::Images => "images",
        };
        let mut line = format!("{}: ok kind={kind} count={} d={}", path.display(), b.count(), b.d);
        if let Some(c) = b.num_classes {
            line.push_str(&format!(" num_classes={c}"));
        }
        println!("{line}");
    }
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        d: a.d,
        num_concepts: a.concepts,
        num_classes: a.classes,
        images_per_class: a.per_class,
        num_informative: a.informative,
        noise_scale: a.noise,
        seed: a.seed,
    };
    let data = generate_synthetic(&spec)?;
    save_bundle(&data.concepts, a.out.join("concepts"))?;
    save_bundle(&data.train, a.out.join("train"))?;
    save_bundle(&data.test, a.out.join("test"))?;
    let planted: String = data.planted.iter().map(|i| format!("{i}\n")).collect();
    write_file(&a.out.join("planted.txt"), &planted)
}

fn stats(a: &StatsArgs) -> Result<()> {
    let lib = load_concepts(&a.concepts)?;
    let images = load_images(&a.images)?;
    let acts = annotate(&lib, &images)?;
    let s = concept_stats(&acts)?;
    let other = match &a.other {
        Some(p) => Some(concept_stats(&annotate(&lib, &load_images(p)?)?)?),
        None => None,
    };

    let mut csv = String::from("index,name,mean,variance");
    if other.is_some() {
        csv.push_str(",other_mean,other_variance");
    }
    csv.push('\n');
    for i in 0..lib.len() {
        csv.push_str(&format!("{i},{},{},{}", csv_field(lib.name(i)), s.means[i], s.variances[i]));
        if let Some(o) = &other {
            csv.push_str(&format!(",{},{}", o.means[i], o.variances[i]));
        }
        csv.push('\n');
    }
    write_file(&a.out.join("variances.csv"), &csv)?;

    if let Some(o) = &other {
        let rho = spearman(&s.variances, &o.variances)?;
        let overlap = top_k_overlap(&s.variances, &o.variances, a.k)?;
        let text = format!("spearman,k,top_k_overlap\n{rho},{},{overlap}\n", a.k);
        write_file(&a.out.join("comparison.csv"), &text)?;
    }
    if let Some(dir) = &a.activations {
        save_matrix(acts.values(), dir)?;
    }
    Ok(())
}

fn rough(a: &RoughArgs) -> Result<()> {
    let lib = load_concepts(&a.concepts)?;
    let images = load_images(&a.images)?;
    let cfg = rough_config(&a.rough, lib.len());
    let result = greedy_select(&lib, &images, &cfg)?;
    emit(a.out.as_deref(), &result.to_tsv(&lib))
}

fn fine(a: &FineArgs) -> Result<()> {
    let lib = load_concepts(&a.concepts)?;
    let train = load_images(&a.train)?;
    let text = fs::read_to_string(&a.selection)
        .with_context(|| format!("reading {}", a.selection.display()))?;
    let rows = parse_selection_tsv(&text).context("parsing selection file")?;
    for r in &rows {
        if r.concept_index >= lib.len() || lib.name(r.concept_index) != r.concept_name {
            bail!(
                "selection row {} ({} {:?}) does not match the concept library",
                r.rank,
                r.concept_index,
                r.concept_name
            );
        }
    }
    let head: Vec<usize> = rows.iter().map(|r| r.concept_index).collect();
    let cfg = a.train_opts.config();
    let n_star = a.n_star.unwrap_or(default_core_size(class_count(&train)?));
    let mask = train_head_mask(&lib, &train, &head, &cfg)?;
    let (_, model) = finish_from_mask(&lib, &train, &mask, n_star, &cfg)?;
    model.save(&a.out)?;

    let mut log = String::from("phase,epoch,loss\n");
    for (e, l) in mask.losses.iter().enumerate() {
        log.push_str(&format!("mask,{e},{l}\n"));
    }
    write_file(&a.out.join("training.csv"), &log)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let lib = load_concepts(&a.concepts)?;
    let test = load_images(&a.test)?;
    let mut reports = vec![evaluate(&model, &test, &lib)?];
    if a.random_seeds > 0 || a.probe {
        let path = a
            .train
            .as_ref()
            .ok_or_else(|| anyhow!("--train is required for baselines"))?;
        let train = load_images(path)?;
        for seed in 0..a.random_seeds {
            reports.push(random_baseline(&lib, &train, &test, model.n_star(), &model.config, seed)?);
        }
        if a.probe {
            reports.push(linear_probe(&train, &test, &model.config)?);
        }
    }
    emit(a.out.as_deref(), &reports_to_csv(&reports))
}

fn csm_config(rough: &RoughOpts, train_opts: &TrainOpts, n_star: usize, library_size: usize) -> CsmConfig {
    CsmConfig {
        rough: rough_config(rough, library_size),
        n_star,
        train: train_opts.config(),
    }
}

fn sweep(a: &SweepArgs) -> Result<()> {
    let lib = load_concepts(&a.concepts)?;
    let train = load_images(&a.train)?;
    let test = load_images(&a.test)?;
    let largest = a.n_stars.iter().copied().max().unwrap_or(1);
    let cfg = csm_config(&a.rough, &a.train_opts, largest, lib.len());
    let reports = quantity_sweep(&lib, &train, &test, &a.n_stars, &cfg)?;
    emit(a.out.as_deref(), &reports_to_csv(&reports))
}

fn fewshot(a: &FewshotArgs) -> Result<()> {
    let lib = load_concepts(&a.concepts)?;
    let train = load_images(&a.train)?;
    let test = load_images(&a.test)?;
    let n_star = a.n_star.unwrap_or(default_core_size(class_count(&train)?));
    let cfg = csm_config(&a.rough, &a.train_opts, n_star, lib.len());
    let mut reports: Vec<EvalReport> = Vec::new();
    for &shots in &a.shots {
        for &seed in &a.seeds {
            let (csm, probe) = few_shot(&lib, &train, &test, shots, &cfg, seed)?;
            reports.push(csm);
            reports.push(probe);
        }
    }
    emit(a.out.as_deref(), &reports_to_csv(&reports))
}

fn explain_cmd(a: &ExplainArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let lib = load_concepts(&a.concepts)?;
    let test = load_images(&a.test)?;
    let row = match (&a.id, a.row) {
        (Some(id), _) => test
            .position_of(id)
            .ok_or_else(|| anyhow!("no image with id {id:?}"))?,
        (None, Some(r)) if r < test.len() => r,
        (None, Some(r)) => bail!("row {r} outside the {} test images", test.len()),
        (None, None) => bail!("one of --id or --row is required"),
    };
    let acts = core_activations(&model, &test.subset(&[row]), &lib)?;
    let interventions: Vec<Intervention> = a
        .set
        .iter()
        .map(|&(position, value)| Intervention {
            image_id: test.ids()[row].clone(),
            position,
            value,
        })
        .collect();
    let edited = intervene(&model, acts.row(0), &interventions)?;
    let label = test.labels().map(|l| l[row]);
    let e = explain(&model, &edited.activations, a.k, &test.ids()[row], label)?;
    let applied: BTreeMap<usize, f64> = a.set.iter().copied().collect();
    emit(a.out.as_deref(), &to_json_pretty(&explanation_view(&model, &e, &applied)))
}

fn debug_eval(a: &DebugEvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let lib = load_concepts(&a.concepts)?;
    let test = load_images(&a.test)?;
    let labels = test.require_labels("debug evaluation")?;
    let acts = core_activations(&model, &test, &lib)?;
    let report = auto_debug_eval(&model, &acts, labels, DebugStrategy::ZeroTopWrong, a.k)?;
    emit(a.out.as_deref(), &to_json_pretty(&report))
}

