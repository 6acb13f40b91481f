//! The end-to-end commands: synthesize, pretrain, train, evaluate, stack
//! and explain. Each writes its outputs plus a `run.json` recording the
//! resolved configuration, seed and SHA-256 of every input and artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::dataset::{
    bone_age_proxy, generate_synthetic, load_manifest, write_manifest, DatasetError, ImageRecord, Manifest, Split, Task,
};
use crate::ensemble::{fit_stacker, predict_stacked, EnsembleError, EnsembleSpec, StackMode, StackTargets, StackedPrediction};
use crate::evaluation::{
    agreement_report_file, classification_metrics, regression_metrics, regression_to_classification, select_cam_cases,
    select_cam_cases_classes, CamCase, EvalError, MetricsReport,
};
use crate::explain::{grad_cam, render_overlay, CamTarget, ExplainError};
use crate::figures::{confusion_plot, scatter_plot};
use crate::imaging::{GrayImage, ImageError};
use crate::models::{build_model, Checkpoint, FreezeScheme, HeadKind, Init, ModelError, ModelSpec, Network};
use crate::preprocess::{prepare_eval, resize_square, PixelStats, PreprocessError};
use crate::svdh::{SvdhError, MAX_TOTAL, NUM_CLASSES};
use crate::training::{decode_outputs, predict_files, train_with_bank, ImageBank, TrainError, TrainTask};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Explain(#[from] ExplainError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Score(#[from] SvdhError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(path: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Run metadata written by every command.
#[derive(Debug, Serialize)]
pub struct RunRecord<C: Serialize> {
    pub command: &'static str,
    pub seed: u64,
    pub config: C,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: BTreeMap<String, String>,
}

fn hash_all(paths: &[PathBuf], base: Option<&Path>) -> Result<BTreeMap<String, String>, PipelineError> {
    let mut out = BTreeMap::new();
    for p in paths {
        let key = base
            .and_then(|b| p.strip_prefix(b).ok())
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned();
        out.insert(key, sha256_file(p)?);
    }
    Ok(out)
}

/// The run configuration with every defaulted training value filled in.
#[derive(Debug, Serialize)]
pub struct Resolved<'a> {
    pub run: &'a RunConfig,
    pub training: crate::training::TrainConfig,
    pub pretraining: crate::training::TrainConfig,
    pub target_size: usize,
}

impl<'a> Resolved<'a> {
    pub fn new(run: &'a RunConfig) -> Self {
        Resolved {
            run,
            training: run.train_config(),
            pretraining: run.pretrain_config(),
            target_size: run.target_size(),
        }
    }
}

fn write_run<C: Serialize>(
    dir: &Path,
    command: &'static str,
    seed: u64,
    config: C,
    inputs: &[PathBuf],
    artifacts: &[PathBuf],
) -> Result<PathBuf, PipelineError> {
    let record = RunRecord {
        command,
        seed,
        config,
        inputs: hash_all(inputs, None)?,
        artifacts: hash_all(artifacts, Some(dir))?,
    };
    let path = dir.join("run.json");
    write_json(&path, &record)?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct SynthesizeArgs {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub force: bool,
}

/// Split of the `i`-th synthetic image: six of every eight train, then
/// one validation and one test.
pub fn synthetic_split(i: usize) -> Split {
    match i % 8 {
        6 => Split::Validation,
        7 => Split::Test,
        _ => Split::Train,
    }
}

pub const SVDH_MANIFEST: &str = "manifest.csv";
pub const BONE_AGE_MANIFEST: &str = "bone_age.csv";

/// Write phantom PNGs under `out/images`, an SvdH manifest and a bone-age
/// manifest over the same images.
pub fn synthesize(args: &SynthesizeArgs) -> Result<Vec<ImageRecord>, PipelineError> {
    if args.count == 0 {
        return Err(PipelineError::Usage("--count must be at least 1".into()));
    }
    if args.out.exists() {
        let non_empty = fs::read_dir(&args.out).map_err(io_err(&args.out))?.next().is_some();
        if non_empty && !args.force {
            return Err(PipelineError::OutputExists(args.out.display().to_string()));
        }
    }
    let phantoms = generate_synthetic(args.count, args.size, args.seed)?;
    let images = args.out.join("images");
    create_dir(&images)?;
    let width = args.count.to_string().len().max(3);
    let mut records = Vec::with_capacity(phantoms.len());
    let mut artifacts = Vec::new();
    for (i, p) in phantoms.iter().enumerate() {
        let id = format!("synth{i:0width$}");
        let path = images.join(format!("{id}.png"));
        p.image.save_png16(&path)?;
        artifacts.push(path.clone());
        records.push(ImageRecord {
            id,
            image_path: path,
            target: p.total,
            split: synthetic_split(i),
        });
    }
    let age: Vec<ImageRecord> = records
        .iter()
        .map(|r| ImageRecord {
            target: bone_age_proxy(r.target),
            ..r.clone()
        })
        .collect();
    for (name, recs) in [(SVDH_MANIFEST, &records), (BONE_AGE_MANIFEST, &age)] {
        let path = args.out.join(name);
        let mut buf = Vec::new();
        write_manifest(&mut buf, recs, &args.out)?;
        write_file(&path, &buf)?;
        artifacts.push(path);
    }
    write_run(&args.out, "synthesize", args.seed, args, &[], &artifacts)?;
    Ok(records)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub epochs: usize,
    pub final_train_mae: f64,
    pub first_train_mae: f64,
}

fn run_training(
    config: &RunConfig,
    command: &'static str,
    dir: PathBuf,
    manifest_path: &Path,
    spec: &ModelSpec,
    tc: &crate::training::TrainConfig,
) -> Result<TrainSummary, PipelineError> {
    create_dir(&dir)?;
    let manifest = load_manifest(manifest_path, tc.task.manifest_task())?;
    let bank = ImageBank::load(&manifest.records, tc.augment.target_size)?;
    let mut net = build_model(spec, config.seed)?;
    let plan = net.freeze_plan();
    let history_path = dir.join("history.jsonl");
    let mut history = fs::File::create(&history_path).map_err(io_err(&history_path))?;
    let mut write_err = None;
    let outcome = train_with_bank(&mut net, &manifest, &bank, tc, |r| {
        let line = serde_json::to_string(r).expect("serializable");
        if let Err(e) = writeln!(history, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(&history_path)(e));
    }
    let ckpt_path = dir.join("best.ckpt");
    outcome.best.save(&ckpt_path)?;
    let plan_path = dir.join("freeze_plan.json");
    write_json(&plan_path, &plan)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    let summary = TrainSummary {
        checkpoint: ckpt_path.clone(),
        best_epoch: outcome.best_epoch,
        best_val_loss: best.val_loss,
        epochs: outcome.history.len(),
        final_train_mae: outcome.history.last().expect("epochs >= 1").train_mae,
        first_train_mae: outcome.history[0].train_mae,
    };
    let summary_path = dir.join("summary.json");
    write_json(&summary_path, &summary)?;
    let mut inputs = vec![manifest_path.to_path_buf()];
    if let Init::FromCheckpoint(p) = &spec.init {
        inputs.push(p.clone());
    }
    #[derive(Serialize)]
    struct TrainRun<'a> {
        #[serde(flatten)]
        resolved: Resolved<'a>,
        model: &'a ModelSpec,
    }
    let mut resolved = Resolved::new(config);
    resolved.training = tc.clone();
    write_run(
        &dir,
        command,
        config.seed,
        TrainRun { resolved, model: spec },
        &inputs,
        &[ckpt_path, history_path, plan_path, summary_path],
    )?;
    Ok(summary)
}

/// Bone-age pretraining of the configured backbone from scratch.
pub fn pretrain(config: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let spec = ModelSpec {
        freeze: FreezeScheme::None,
        init: Init::Scratch,
        ..config.model_spec(HeadKind::Regression)
    };
    let tc = config.pretrain_config();
    run_training(config, "pretrain", config.out.join("pretrain"), &config.data.pretrain_manifest, &spec, &tc)
}

/// Finetune (or train from scratch) on the SvdH manifest.
pub fn train(config: &RunConfig) -> Result<TrainSummary, PipelineError> {
    let tc = config.train_config();
    if tc.task == TrainTask::BoneAge {
        return Err(PipelineError::Usage("use `pretrain` for the bone_age task".into()));
    }
    let spec = config.model_spec(tc.task.head());
    run_training(config, "train", config.out.join("train"), &config.data.manifest, &spec, &tc)
}

fn default_checkpoint(config: &RunConfig, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| config.out.join("train").join("best.ckpt"))
}

/// Decoded predictions of a checkpoint on one split.
struct SplitPredictions {
    ids: Vec<String>,
    paths: Vec<PathBuf>,
    truth: Vec<f64>,
    raw: Vec<f32>,
    predicted: Vec<f64>,
}

fn predict_split(config: &RunConfig, ckpt: &Checkpoint, manifest: &Manifest, split: Split) -> Result<SplitPredictions, PipelineError> {
    let records: Vec<&ImageRecord> = manifest.split(split).collect();
    if records.is_empty() {
        return Err(PipelineError::Usage(format!("manifest has no {split} rows")));
    }
    let paths: Vec<&Path> = records.iter().map(|r| r.image_path.as_path()).collect();
    let raw = predict_files(ckpt, &paths, config.target_size(), config.train.batch_size)?;
    let predicted = decode_outputs(ckpt.head, &raw, ckpt.target_stats.as_ref());
    Ok(SplitPredictions {
        ids: records.iter().map(|r| r.id.clone()).collect(),
        paths: records.iter().map(|r| r.image_path.clone()).collect(),
        truth: records.iter().map(|r| r.target).collect(),
        raw,
        predicted,
    })
}

fn classes_of(config: &RunConfig, scores: &[f64]) -> Result<Vec<usize>, PipelineError> {
    let b = config.binning();
    Ok(scores.iter().map(|&s| b.score_to_class(s)).collect::<Result<_, _>>()?)
}

fn predictions_csv(path: &Path, ids: &[String], truth: &[f64], predicted: &[f64]) -> Result<(), PipelineError> {
    let mut text = String::from("id,truth,predicted\n");
    for ((id, t), p) in ids.iter().zip(truth).zip(predicted) {
        text.push_str(&format!("{id},{t},{p}\n"));
    }
    write_file(path, text.as_bytes())
}

/// Metrics and figures for one set of predictions. Regression reports
/// are accompanied by binned class metrics.
fn report(
    config: &RunConfig,
    dir: &Path,
    head: HeadKind,
    ids: &[String],
    truth: &[f64],
    predicted: &[f64],
    artifacts: &mut Vec<PathBuf>,
) -> Result<MetricsReport, PipelineError> {
    let true_classes = classes_of(config, truth)?;
    let metrics_path = dir.join("metrics.json");
    let confusion_path = dir.join("confusion.png");
    let predictions_path = dir.join("predictions.csv");
    predictions_csv(&predictions_path, ids, truth, predicted)?;
    let report = match head {
        HeadKind::Regression => {
            let m = MetricsReport::from_regression(regression_metrics(predicted, truth)?);
            let binned = classification_metrics(&regression_to_classification(predicted, &config.binning()), &true_classes)?;
            let binned_path = dir.join("class_metrics.json");
            write_json(&binned_path, &binned)?;
            confusion_plot(binned.confusion.as_ref().expect("classification report"), &confusion_path)?;
            let scatter_path = dir.join("scatter.png");
            scatter_plot(truth, predicted, 0.0, MAX_TOTAL, 40.0, &scatter_path)?;
            artifacts.extend([binned_path, scatter_path]);
            m
        }
        HeadKind::Classification => {
            let pred: Vec<usize> = predicted.iter().map(|&c| c as usize).collect();
            let m = classification_metrics(&pred, &true_classes)?;
            confusion_plot(m.confusion.as_ref().expect("classification report"), &confusion_path)?;
            m
        }
    };
    write_json(&metrics_path, &report)?;
    artifacts.extend([metrics_path, confusion_path, predictions_path]);
    Ok(report)
}

/// `id,predicted` rows (other columns ignored), aligned to the split's ids.
fn read_predictions(path: &Path, ids: &[String]) -> Result<Vec<f64>, PipelineError> {
    let bad = |m: String| PipelineError::Usage(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| bad(format!("missing column `{name}`")));
    let (id_col, pred_col) = (col("id")?, col("predicted")?);
    let mut by_id = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let value: f64 = row[pred_col]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {}: predicted `{}` is not a number", i + 1, &row[pred_col])))?;
        by_id.insert(row[id_col].to_string(), value);
    }
    ids.iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| bad(format!("no prediction for id `{id}`"))))
        .collect()
}

/// Score a checkpoint, or a predictions file when `evaluate.predictions`
/// is set, against one split of the SvdH manifest.
pub fn evaluate(config: &RunConfig) -> Result<MetricsReport, PipelineError> {
    let dir = config.out.join("evaluate");
    create_dir(&dir)?;
    let manifest = load_manifest(&config.data.manifest, Task::Svdh)?;
    let (head, ids, truth, predicted, mut inputs) = match &config.evaluate.predictions {
        Some(path) => {
            let records: Vec<&ImageRecord> = manifest.split(config.evaluate.split).collect();
            let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
            let predicted = read_predictions(path, &ids)?;
            let truth = records.iter().map(|r| r.target).collect();
            (config.train.task.head(), ids, truth, predicted, vec![path.clone()])
        }
        None => {
            let ckpt_path = default_checkpoint(config, &config.evaluate.checkpoint);
            let ckpt = Checkpoint::load(&ckpt_path)?;
            let p = predict_split(config, &ckpt, &manifest, config.evaluate.split)?;
            (ckpt.head, p.ids, p.truth, p.predicted, vec![ckpt_path])
        }
    };
    let mut artifacts = Vec::new();
    let metrics = report(config, &dir, head, &ids, &truth, &predicted, &mut artifacts)?;
    inputs.push(config.data.manifest.clone());
    if let Some(csv) = &config.data.agreement_csv {
        let agreement = agreement_report_file(csv)?;
        let path = dir.join("agreement.json");
        write_json(&path, &agreement)?;
        artifacts.push(path);
        inputs.push(csv.clone());
    }
    write_run(&dir, "evaluate", config.seed, Resolved::new(config), &inputs, &artifacts)?;
    Ok(metrics)
}

/// Raw outputs of a member, with regression outputs re-expressed in the
/// manifest's standardized units.
fn member_outputs(config: &RunConfig, ckpt: &Checkpoint, manifest: &Manifest, split: Split) -> Result<Vec<f64>, PipelineError> {
    let p = predict_split(config, ckpt, manifest, split)?;
    Ok(match ckpt.head {
        HeadKind::Regression => p.predicted.iter().map(|&y| manifest.target_stats.standardize(y)).collect(),
        HeadKind::Classification => p.raw.iter().map(|&v| v as f64).collect(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StackSummary {
    pub spec: PathBuf,
    pub ensemble: MetricsReport,
    pub members: Vec<MetricsReport>,
}

/// Fit the stacker on validation-split member outputs and evaluate the
/// ensemble on the test split.
pub fn stack(config: &RunConfig) -> Result<StackSummary, PipelineError> {
    let dir = config.out.join("stack");
    create_dir(&dir)?;
    let mode = config.stack.mode;
    if config.stack.members.len() != 3 {
        return Err(PipelineError::Usage(format!(
            "stack.members must list exactly 3 checkpoints, got {}",
            config.stack.members.len()
        )));
    }
    let head = if mode == StackMode::Regression {
        HeadKind::Regression
    } else {
        HeadKind::Classification
    };
    let manifest = load_manifest(&config.data.manifest, Task::Svdh)?;
    let ckpts = config
        .stack
        .members
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    for (p, c) in config.stack.members.iter().zip(&ckpts) {
        if c.head != head {
            return Err(PipelineError::Usage(format!(
                "member {} has a {:?} head but stack.mode is {mode:?}",
                p.display(),
                c.head
            )));
        }
    }
    let fit_inputs = ckpts
        .iter()
        .map(|c| member_outputs(config, c, &manifest, Split::Validation))
        .collect::<Result<Vec<_>, _>>()?;
    let val: Vec<&ImageRecord> = manifest.split(Split::Validation).collect();
    let targets = match head {
        HeadKind::Regression => StackTargets::Regression(val.iter().map(|r| manifest.target_stats.standardize(r.target)).collect()),
        HeadKind::Classification => {
            StackTargets::Classes(classes_of(config, &val.iter().map(|r| r.target).collect::<Vec<_>>())?)
        }
    };
    let stacker = fit_stacker(&fit_inputs, &targets, mode, &config.stack_fit())?;
    let spec = EnsembleSpec::new(
        config.stack.members.clone(),
        stacker,
        (head == HeadKind::Regression).then_some(manifest.target_stats),
    )?;
    let spec_path = dir.join("ensemble.json");
    write_file(&spec_path, spec.to_json()?.as_bytes())?;

    let test_inputs = ckpts
        .iter()
        .map(|c| member_outputs(config, c, &manifest, Split::Test))
        .collect::<Result<Vec<_>, _>>()?;
    let test: Vec<&ImageRecord> = manifest.split(Split::Test).collect();
    let ids: Vec<String> = test.iter().map(|r| r.id.clone()).collect();
    let truth: Vec<f64> = test.iter().map(|r| r.target).collect();
    let decoded = match predict_stacked(&spec, &test_inputs)? {
        StackedPrediction::Regression(v) => v,
        StackedPrediction::Classification { classes, .. } => classes.into_iter().map(|c| c as f64).collect(),
    };
    let mut artifacts = vec![spec_path.clone()];
    let ensemble = report(config, &dir, head, &ids, &truth, &decoded, &mut artifacts)?;
    let true_classes = classes_of(config, &truth)?;
    let members = test_inputs
        .iter()
        .map(|m| -> Result<MetricsReport, PipelineError> {
            Ok(match head {
                HeadKind::Regression => {
                    let y: Vec<f64> = m.iter().map(|&z| manifest.target_stats.destandardize(z)).collect();
                    MetricsReport::from_regression(regression_metrics(&y, &truth)?)
                }
                HeadKind::Classification => {
                    let c: Vec<usize> = m
                        .chunks_exact(NUM_CLASSES)
                        .map(|row| {
                            let row32: Vec<f32> = row.iter().map(|&v| v as f32).collect();
                            crate::training::argmax(&row32)
                        })
                        .collect();
                    classification_metrics(&c, &true_classes)?
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let members_path = dir.join("member_metrics.json");
    write_json(&members_path, &members)?;
    artifacts.push(members_path);
    let mut inputs = config.stack.members.clone();
    inputs.push(config.data.manifest.clone());
    write_run(&dir, "stack", config.seed, Resolved::new(config), &inputs, &artifacts)?;
    Ok(StackSummary {
        spec: spec_path,
        ensemble,
        members,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlayEntry {
    #[serde(flatten)]
    pub case: CamCase,
    pub overlay: PathBuf,
}

/// Grad-CAM overlays for the TP/TN/FP/FN exemplars of one split.
pub fn explain(config: &RunConfig) -> Result<Vec<OverlayEntry>, PipelineError> {
    let dir = config.out.join("explain");
    create_dir(&dir)?;
    let ckpt_path = default_checkpoint(config, &config.explain.checkpoint);
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let manifest = load_manifest(&config.data.manifest, Task::Svdh)?;
    let p = predict_split(config, &ckpt, &manifest, config.explain.split)?;
    let cases = match ckpt.head {
        HeadKind::Regression => select_cam_cases(&p.ids, &p.predicted, &p.truth)?,
        HeadKind::Classification => {
            let pred: Vec<usize> = p.predicted.iter().map(|&c| c as usize).collect();
            select_cam_cases_classes(&p.ids, &pred, &classes_of(config, &p.truth)?, &config.binning())?
        }
    };
    let mut net = Network::from_checkpoint(&ckpt, FreezeScheme::None)?;
    let stats = ckpt.pixel_stats.unwrap_or(PixelStats::IDENTITY);
    let size = config.target_size();
    let mut entries = Vec::new();
    let mut artifacts = Vec::new();
    for group in [&cases.tp, &cases.tn, &cases.fp, &cases.fn_] {
        for case in group.iter().take(config.explain.max_per_kind) {
            let idx = p.ids.iter().position(|id| *id == case.id).expect("case ids come from the split");
            let image = GrayImage::open(&p.paths[idx])?;
            let input = prepare_eval(&image, size, &stats)?.to_tensor();
            let heat = grad_cam(&mut net, &input, CamTarget::Predicted)?.remove(0);
            let overlay = dir.join(format!("{}_{}.png", case.kind.label(), case.id));
            render_overlay(&resize_square(&image, size)?, &heat, config.explain.alpha, &overlay)?;
            artifacts.push(overlay.clone());
            entries.push(OverlayEntry {
                case: case.clone(),
                overlay,
            });
        }
    }
    let index = dir.join("report.json");
    write_json(&index, &entries)?;
    artifacts.push(index);
    write_run(&dir, "explain", config.seed, Resolved::new(config), &[ckpt_path, config.data.manifest.clone()], &artifacts)?;
    Ok(entries)
}
