use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{error, info};
use rayon::prelude::*;

use patchcontour::bench::{
    aggregate, default_thresholds, format_pr_csv, format_report, pr_curve, BenchmarkScores,
    BinaryMap,
};
use patchcontour::convnet::{load_model, save_model, train, EpochMetrics, NetworkModel};
use patchcontour::dataset::{build_dataset, read_dataset, write_dataset, Corpus, DatasetManifest};
use patchcontour::inference::detect_contours;
use patchcontour::io::{read_any_map, read_image, write_image, write_map};
use patchcontour::raster::sobel_gradient_magnitude;
use patchcontour::refine::refine;
use patchcontour::synth::{write_corpus, SynthConfig};
use patchcontour::RasterImage;

use crate::config::{usage, RunConfig};

fn corpus_root(cfg: &RunConfig) -> Result<&Path> {
    cfg.corpus
        .as_deref()
        .ok_or_else(|| usage("no corpus root: pass --corpus or set corpus in the config"))
}

fn scan(root: &Path, split: &str) -> Result<Corpus> {
    let corpus = Corpus::scan(root, split)?;
    if corpus.is_empty() {
        return Err(patchcontour::Error::Format(format!(
            "no images in {}",
            root.join(split).display()
        ))
        .into());
    }
    Ok(corpus)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| patchcontour::Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| patchcontour::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

pub fn dataset(cfg: &RunConfig, split: &str, out: &Path) -> Result<DatasetManifest> {
    let corpus = scan(corpus_root(cfg)?, split)?;
    let manifest = build_dataset(&corpus, cfg.seed, cfg.label_threshold)?;
    write_dataset(out, &manifest.samples)?;
    println!("images={}", corpus.len());
    println!("raw_positives={}", manifest.raw_positives);
    println!("raw_negatives={}", manifest.raw_negatives);
    println!("positives={}", manifest.positives);
    println!("negatives={}", manifest.negatives);
    println!("samples={}", manifest.samples.len());
    info!(
        "wrote {} samples to {}",
        manifest.samples.len(),
        out.display()
    );
    Ok(manifest)
}

pub fn metrics_csv(history: &[EpochMetrics]) -> String {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    for m in history {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{},{}",
            m.epoch,
            m.train_loss,
            m.train_acc,
            opt(m.val_loss),
            opt(m.val_acc)
        );
    }
    s
}

pub fn train_model(
    cfg: &RunConfig,
    dataset: &Path,
    validation: Option<&Path>,
    model_out: &Path,
    metrics: &Path,
) -> Result<NetworkModel> {
    let arch = cfg.architecture()?;
    let samples = read_dataset(dataset)?;
    if samples.is_empty() {
        return Err(
            patchcontour::Error::Format(format!("{} holds no samples", dataset.display())).into(),
        );
    }
    let val = validation.map(read_dataset).transpose()?;
    info!(
        "training {} parameters on {} samples{}",
        arch.param_count(),
        samples.len(),
        val.as_ref()
            .map(|v| format!(", {} validation", v.len()))
            .unwrap_or_default()
    );
    let outcome = train(arch, &samples, val.as_deref(), &cfg.train)?;
    save_model(&outcome.model, model_out)?;
    write_text(metrics, &metrics_csv(&outcome.history))?;
    if let Some(last) = outcome.history.last() {
        println!("epochs={}", last.epoch);
        println!("train_loss={:.6}", last.train_loss);
        println!("train_acc={:.6}", last.train_acc);
    }
    Ok(outcome.model)
}

/// An image to process and the file stem its outputs are named after.
pub struct Job {
    pub id: String,
    pub image: PathBuf,
}

pub fn jobs_from_paths(paths: &[PathBuf]) -> Result<Vec<Job>> {
    paths
        .iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| usage(format!("bad image name {}", p.display())))?;
            Ok(Job {
                id: id.to_string(),
                image: p.clone(),
            })
        })
        .collect()
}

pub fn jobs_from_corpus(root: &Path, split: &str) -> Result<Vec<Job>> {
    Ok(scan(root, split)?
        .entries
        .into_iter()
        .map(|e| Job {
            id: e.id,
            image: e.image_path,
        })
        .collect())
}

fn write_both(dir: &Path, id: &str, map: &RasterImage) -> Result<()> {
    write_map(dir.join(format!("{id}.cfr")), map)?;
    write_image(dir.join(format!("{id}.pgm")), map)?;
    Ok(())
}

/// Run `f` on every job, logging failures and carrying on. Fails at the end
/// when any job failed.
fn for_each_job(jobs: &[Job], what: &str, f: impl Fn(&Job) -> Result<()>) -> Result<()> {
    let mut failed = Vec::new();
    for job in jobs {
        if let Err(e) = f(job) {
            error!("{}: {e:#}", job.id);
            failed.push(job.id.clone());
        }
    }
    if !failed.is_empty() {
        return Err(patchcontour::Error::Corpus(
            failed
                .iter()
                .map(|id| format!("{what} failed for {id}"))
                .collect(),
        )
        .into());
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, model: &NetworkModel, jobs: &[Job], out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    for_each_job(jobs, "prediction", |job| {
        let img = read_image(&job.image)?;
        let coarse = detect_contours(model, &img, &cfg.voting)?;
        write_both(out_dir, &job.id, &coarse.map)?;
        info!("{}: {}x{} coarse map", job.id, img.height(), img.width());
        Ok(())
    })?;
    println!("predicted={}", jobs.len());
    Ok(())
}

pub fn refine_one(cfg: &RunConfig, coarse: &Path, image: &Path, out: &Path) -> Result<()> {
    let coarse = read_any_map(coarse)?;
    let image = read_image(image)?;
    let fine = refine(&coarse, &image, &cfg.refine)?;
    if out.extension().is_some_and(|e| e == "pgm") {
        write_image(out, &fine)?;
    } else {
        write_map(out, &fine)?;
    }
    Ok(())
}

/// Refine every job's coarse map `<coarse_dir>/<id>.cfr` into `out_dir`.
pub fn refine_all(cfg: &RunConfig, jobs: &[Job], coarse_dir: &Path, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    for_each_job(jobs, "refinement", |job| {
        let coarse = read_any_map(coarse_dir.join(format!("{}.cfr", job.id)))?;
        let fine = refine(&coarse, &read_image(&job.image)?, &cfg.refine)?;
        write_both(out_dir, &job.id, &fine)
    })
}

/// Find `<id>.cfr`, falling back to `<id>.pgm`.
fn prediction_path(dir: &Path, id: &str) -> Option<PathBuf> {
    ["cfr", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

pub fn score_maps(
    cfg: &RunConfig,
    corpus: &Corpus,
    load: impl Fn(&str) -> Result<RasterImage> + Sync,
) -> Result<BenchmarkScores> {
    let thresholds = default_thresholds(cfg.thresholds);
    let curves = corpus
        .entries
        .par_iter()
        .map(|e| {
            let map = load(&e.id)?;
            let gt: Vec<BinaryMap> = e
                .load_ground_truth()?
                .labeler_maps()
                .iter()
                .map(BinaryMap::nonzero)
                .collect();
            pr_curve(&map, &gt, &thresholds, cfg.tolerance).with_context(|| e.id.clone())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(aggregate(curves)?)
}

pub fn evaluate(
    cfg: &RunConfig,
    split: &str,
    pred_dir: &Path,
    report: Option<&Path>,
    pr_csv: Option<&Path>,
) -> Result<BenchmarkScores> {
    let corpus = scan(corpus_root(cfg)?, split)?;
    let missing: Vec<String> = corpus
        .entries
        .iter()
        .filter(|e| prediction_path(pred_dir, &e.id).is_none())
        .map(|e| format!("no prediction for {} in {}", e.id, pred_dir.display()))
        .collect();
    if !missing.is_empty() {
        return Err(patchcontour::Error::Corpus(missing).into());
    }
    let scores = score_maps(cfg, &corpus, |id| {
        Ok(read_any_map(
            prediction_path(pred_dir, id).expect("checked above"),
        )?)
    })?;
    let mut header = vec![format!("images = {}", corpus.len())];
    header.extend(cfg.resolved_lines());
    let text = format_report(&scores, &header);
    print!("{}", format_report(&scores, &[]));
    if let Some(p) = report {
        write_text(p, &text)?;
    }
    if let Some(p) = pr_csv {
        write_text(p, &format_pr_csv(&scores.dataset_curve))?;
    }
    Ok(scores)
}

pub fn synth(cfg: &RunConfig, out: &Path, split: &str, count: usize, size: usize) -> Result<()> {
    if count == 0 {
        bail!(usage("--count must be at least 1"));
    }
    let sc = SynthConfig {
        height: size,
        width: size,
        ..SynthConfig::default()
    };
    write_corpus(out, split, count, cfg.seed, &sc).map_err(|e| match e {
        patchcontour::Error::InvalidArgument(m) => usage(m),
        other => other.into(),
    })?;
    println!("generated={count}");
    Ok(())
}

pub struct PipelinePlan<'a> {
    pub work_dir: &'a Path,
    pub synthetic: Option<usize>,
    pub train_split: &'a str,
    pub test_split: &'a str,
}

/// dataset → train → predict → refine → eval, with coarse-map and Sobel
/// baselines scored by the same harness.
pub fn pipeline(cfg: &RunConfig, plan: &PipelinePlan) -> Result<()> {
    let work = plan.work_dir;
    create_dir(work)?;
    let mut cfg = cfg.clone();
    if let Some(n) = plan.synthetic {
        if n < 2 {
            bail!(usage("--synthetic needs at least 2 images"));
        }
        let root = work.join("corpus");
        let n_test = (n / 5).max(1);
        let sc = SynthConfig::default();
        write_corpus(&root, plan.train_split, n - n_test, cfg.seed, &sc)?;
        write_corpus(
            &root,
            plan.test_split,
            n_test,
            cfg.seed.wrapping_add(1),
            &sc,
        )?;
        info!(
            "generated {} training and {n_test} test scenes in {}",
            n - n_test,
            root.display()
        );
        cfg.corpus = Some(root);
    }
    let root = corpus_root(&cfg)?.to_path_buf();

    info!("stage: dataset");
    let dataset_path = work.join("dataset.bin");
    dataset(&cfg, plan.train_split, &dataset_path)?;

    info!("stage: train");
    let model_path = work.join("model.bin");
    train_model(
        &cfg,
        &dataset_path,
        None,
        &model_path,
        &work.join("metrics.csv"),
    )?;
    let model = load_model(&model_path)?;

    info!("stage: predict");
    let jobs = jobs_from_corpus(&root, plan.test_split)?;
    let coarse_dir = work.join("coarse");
    predict(&cfg, &model, &jobs, &coarse_dir)?;

    info!("stage: refine");
    let fine_dir = work.join("fine");
    refine_all(&cfg, &jobs, &coarse_dir, &fine_dir)?;

    info!("stage: eval");
    let corpus = scan(&root, plan.test_split)?;
    let fine = evaluate(
        &cfg,
        plan.test_split,
        &fine_dir,
        None,
        Some(&work.join("pr.csv")),
    )?;
    let coarse = score_maps(&cfg, &corpus, |id| {
        Ok(read_any_map(coarse_dir.join(format!("{id}.cfr")))?)
    })?;
    let sobel = score_maps(&cfg, &corpus, |id| {
        let e = corpus
            .entries
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| anyhow!("unknown id {id}"))?;
        Ok(sobel_gradient_magnitude(&e.load_image()?))
    })?;
    let mut header = vec![format!("images = {}", corpus.len())];
    header.extend(cfg.resolved_lines());
    let mut text = format_report(&fine, &header);
    let _ = writeln!(text, "coarse_ods_f={:.6}", coarse.ods_f);
    let _ = writeln!(text, "sobel_ods_f={:.6}", sobel.ods_f);
    write_text(&work.join("report.txt"), &text)?;
    println!("coarse_ods_f={:.6}", coarse.ods_f);
    println!("sobel_ods_f={:.6}", sobel.ods_f);
    info!("report written to {}", work.join("report.txt").display());
    Ok(())
}
