use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use movt_core::eval::{
    coverage_csv, coverage_curve, embeddings_csv, per_class_accuracy, per_class_csv, predict, sample_id, top1_accuracy,
    PredictionRecord,
};
use movt_core::fusion::{fuse_and_eval, labels_from_csv, late_fuse, FusionSpace, LogitsTable};
use movt_core::model::{checkpoint, count_flops, count_params, ledger};
use movt_core::nn::Real;
use movt_core::saliency::{histogram_csv, importance_histogram, scores_csv, topk_tracks, track_importance, Attribution};
use movt_core::synthgen::{generate_dataset, generate_samples};
use movt_core::train::{linear_probe, reduce_training_set, train_with, validation_metrics, DatasetSplit, Precision};
use movt_core::trackio::{encode_tracks, subsample_tracks, temporal_crop, Sample};
use movt_core::{seed, Error, Model, ModelConfig, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, ModelKind};

pub const BEST_CHECKPOINT: &str = "checkpoints/best.mvtw";

/// Input transforms shared by `train`, `eval` and `sweep`.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Transform {
    pub crop: Option<usize>,
    pub tracks: Option<usize>,
}

impl Transform {
    fn apply(&self, split: &DatasetSplit, master: u64) -> Result<DatasetSplit> {
        let mut out = split.clone();
        let mut index = 0u64;
        for s in out.train.iter_mut().chain(&mut out.val).chain(&mut out.test) {
            if let Some(n) = self.crop {
                s.set = temporal_crop(&s.set, n)?;
            }
            if let Some(k) = self.tracks {
                s.set = subsample_tracks(&s.set, k, seed::derive(master, "subsample", index))?;
            }
            index += 1;
        }
        Ok(out)
    }
}

pub fn load_split(data: Option<&Path>, cfg: &ExperimentConfig) -> Result<DatasetSplit> {
    match data {
        Some(dir) => DatasetSplit::load(dir, cfg.seed),
        None => {
            let samples = generate_samples(&cfg.data)?
                .into_iter()
                .map(|(e, set)| Sample {
                    file: e.file,
                    split: e.split,
                    label: e.label,
                    set,
                })
                .collect();
            DatasetSplit::from_samples(samples, cfg.seed)
        }
    }
}

/// SHA-256 over every clip's file name and PTRK encoding, train then val then test.
pub fn dataset_hash(split: &DatasetSplit) -> Result<String> {
    let mut h = Sha256::new();
    for s in split.train.iter().chain(&split.val).chain(&split.test) {
        h.update(s.file.as_bytes());
        h.update(encode_tracks(&s.set)?);
    }
    Ok(hex::encode(h.finalize()))
}

fn file_hash(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn start_run(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)
}

fn classification_only(model: &ModelConfig) -> Result<usize> {
    model
        .head()
        .classes()
        .ok_or_else(|| Error::Config("this command needs a classification head".into()))
}

pub fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<Value> {
    fs::create_dir_all(out)?;
    let entries = generate_dataset(&cfg.data, out)?;
    Ok(json!({
        "out": out,
        "files": entries.len(),
        "config": cfg.data,
    }))
}

fn epochs_csv(report: &movt_core::train::TrainReport) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_metric,lr\n");
    for e in &report.epochs {
        s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_metric, e.lr));
    }
    s
}

fn test_summary<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<Value> {
    if samples.is_empty() {
        return Ok(Value::Null);
    }
    let records = predict(model, samples)?;
    Ok(match model.head().classes() {
        Some(_) => json!({ "top1": top1_accuracy(&records)?, "samples": records.len() }),
        None => json!({ "mse": mean_squared_error(&records), "samples": records.len() }),
    })
}

fn mean_squared_error(records: &[PredictionRecord]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in records {
        if let Some(t) = r.label.target() {
            for (p, y) in r.output.iter().zip(t) {
                sum += (p - f64::from(*y)).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// One training run into `out`; returns the report document.
pub fn train_run(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    split: &DatasetSplit,
    fraction: Option<f64>,
    transform: Transform,
    out: &Path,
) -> Result<Value> {
    match cfg.train.precision {
        Precision::F32 => train_typed::<f32>(cfg, kind, split, fraction, transform, out),
        Precision::F64 => train_typed::<f64>(cfg, kind, split, fraction, transform, out),
    }
}

fn train_typed<F: Real>(
    cfg: &ExperimentConfig,
    kind: ModelKind,
    split: &DatasetSplit,
    fraction: Option<f64>,
    transform: Transform,
    out: &Path,
) -> Result<Value> {
    start_run(out, cfg)?;
    let input_hash = dataset_hash(split)?;
    let mut data = transform.apply(split, cfg.seed)?;
    if let Some(f) = fraction {
        data = reduce_training_set(&data, f, cfg.seed)?;
    }
    let model_cfg = cfg.model(kind);
    let model = Model::<F>::new(&model_cfg, cfg.seed)?;
    let (model, mut report) = train_with(model, &data, &cfg.train, |_| {})?;
    let ckpt = out.join(BEST_CHECKPOINT);
    fs::create_dir_all(ckpt.parent().expect("checkpoint has a parent"))?;
    checkpoint::save(&model, &ckpt)?;
    report.checkpoint = Some(BEST_CHECKPOINT.to_string());
    fs::write(out.join("epochs.csv"), epochs_csv(&report))?;
    let doc = json!({
        "command": "train",
        "model": kind,
        "config": cfg,
        "input_hash": input_hash,
        "fraction": fraction,
        "transform": transform,
        "train_samples": data.train.len(),
        "params": count_params(&model_cfg),
        "test": test_summary(&model, &data.test)?,
        "report": report,
    });
    write_json(&out.join("report.json"), &doc)?;
    Ok(doc)
}

pub struct EvalOptions {
    pub thresholds: Vec<f64>,
    pub export_embeddings: bool,
    pub transform: Transform,
}

pub fn eval(cfg: &ExperimentConfig, checkpoint_path: &Path, split: &DatasetSplit, opts: &EvalOptions, out: &Path) -> Result<Value> {
    match cfg.train.precision {
        Precision::F32 => eval_typed::<f32>(cfg, checkpoint_path, split, opts, out),
        Precision::F64 => eval_typed::<f64>(cfg, checkpoint_path, split, opts, out),
    }
}

fn eval_typed<F: Real>(
    cfg: &ExperimentConfig,
    checkpoint_path: &Path,
    split: &DatasetSplit,
    opts: &EvalOptions,
    out: &Path,
) -> Result<Value> {
    start_run(out, cfg)?;
    let model: Model<F> = checkpoint::load(checkpoint_path)?;
    let input_hash = dataset_hash(split)?;
    let data = opts.transform.apply(split, cfg.seed)?;
    let mut doc = json!({
        "command": "eval",
        "checkpoint": checkpoint_path,
        "checkpoint_hash": file_hash(checkpoint_path)?,
        "model": model.config(),
        "config": cfg,
        "input_hash": input_hash,
        "transform": opts.transform,
    });
    if !data.val.is_empty() {
        let (loss, metric) = validation_metrics(&model, &data.val, &cfg.train)?;
        doc["val_loss"] = json!(loss);
        doc["val_metric"] = json!(metric);
    }
    let records = predict(&model, &data.test)?;
    if let Some(classes) = model.head().classes() {
        doc["test_top1"] = json!(top1_accuracy(&records)?);
        let pc = per_class_accuracy(&records, Some(classes))?;
        fs::write(out.join("per_class.csv"), per_class_csv(&pc))?;
        let curve = coverage_curve(&records, &opts.thresholds)?;
        fs::write(out.join("coverage.csv"), coverage_csv(&curve))?;
        let rows = records.iter().map(|r| (r.id.clone(), r.output.clone())).collect();
        let gflops = data
            .test
            .first()
            .map(|s| count_flops(&model.config(), s.set.tracks(), s.set.frames()));
        LogitsTable::new(checkpoint_path.display().to_string(), gflops, rows)?.save(out.join("logits.csv"))?;
        let mut labels = String::from("id,label\n");
        for r in &records {
            labels.push_str(&format!("{},{}\n", r.id, r.label.class().unwrap_or_default()));
        }
        fs::write(out.join("labels.csv"), labels)?;
        doc["gflops"] = json!(gflops);
    } else {
        doc["test_mse"] = json!(mean_squared_error(&records));
    }
    if opts.export_embeddings {
        let rows = movt_core::eval::embeddings(&model, &data.test)?;
        fs::write(out.join("embeddings.csv"), embeddings_csv(&rows))?;
    }
    write_json(&out.join("metrics.json"), &doc)?;
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Axis {
    Fraction,
    Tracks,
    Crop,
}

pub struct SweepOptions {
    pub axis: Axis,
    pub values: Option<Vec<f64>>,
    pub models: Option<Vec<ModelKind>>,
    pub equal_steps: bool,
}

pub fn sweep(cfg: &ExperimentConfig, split: &DatasetSplit, opts: &SweepOptions, out: &Path) -> Result<Value> {
    let values: Vec<f64> = match (&opts.values, opts.axis) {
        (Some(v), _) => v.clone(),
        (None, Axis::Fraction) => cfg.sweep.fractions.clone(),
        (None, Axis::Tracks) => cfg.sweep.tracks.iter().map(|&v| v as f64).collect(),
        (None, Axis::Crop) => cfg.sweep.crops.iter().map(|&v| v as f64).collect(),
    };
    if values.is_empty() {
        return Err(Error::Config("sweep has no values".into()));
    }
    let models = match (&opts.models, opts.axis) {
        (Some(m), Axis::Tracks) if m.contains(&ModelKind::Pixt) => {
            return Err(Error::Config("the tracks axis applies to movt only".into()));
        }
        (Some(m), _) => m.clone(),
        (None, Axis::Tracks) => vec![ModelKind::Movt],
        (None, _) => cfg.sweep.models.clone(),
    };
    for &v in &values {
        let ok = match opts.axis {
            Axis::Fraction => v > 0.0 && v <= 1.0,
            _ => v >= 1.0 && v.fract() == 0.0,
        };
        if !ok {
            return Err(Error::Config(format!("sweep value {v} invalid for {:?}", opts.axis)));
        }
    }
    start_run(out, cfg)?;
    let input_hash = dataset_hash(split)?;
    let mut csv = String::from("model,axis,value,seed,epochs,train_samples,best_epoch,best_val_metric,test_metric,weights_hash\n");
    let axis_name = format!("{:?}", opts.axis).to_lowercase();
    for &kind in &models {
        for (i, &v) in values.iter().enumerate() {
            let mut point = cfg.clone();
            let (mut fraction, mut transform) = (None, Transform::default());
            match opts.axis {
                Axis::Fraction => {
                    fraction = Some(v);
                    if opts.equal_steps {
                        point.train.epochs = ((cfg.train.epochs as f64) / v).round() as usize;
                    }
                }
                Axis::Tracks => transform.tracks = Some(v as usize),
                Axis::Crop => transform.crop = Some(v as usize),
            }
            let dir = out.join(format!("{}_{axis_name}_{i}", serde_json::to_value(kind)?.as_str().unwrap_or("model")));
            let doc = train_run(&point, kind, split, fraction, transform, &dir)?;
            let report = &doc["report"];
            let test = doc["test"]["top1"].as_f64().or(doc["test"]["mse"].as_f64()).unwrap_or(f64::NAN);
            csv.push_str(&format!(
                "{},{axis_name},{v},{},{},{},{},{},{test},{}\n",
                serde_json::to_value(kind)?.as_str().unwrap_or_default(),
                point.seed,
                point.train.epochs,
                doc["train_samples"],
                report["best_epoch"],
                report["best_val_metric"],
                report["weights_hash"].as_str().unwrap_or_default(),
            ));
        }
    }
    fs::write(out.join("sweep.csv"), &csv)?;
    let doc = json!({
        "command": "sweep",
        "axis": axis_name,
        "values": values,
        "models": models,
        "equal_steps": opts.equal_steps,
        "config": cfg,
        "input_hash": input_hash,
    });
    write_json(&out.join("report.json"), &doc)?;
    Ok(doc)
}

pub struct FuseOptions {
    pub a: PathBuf,
    pub b: PathBuf,
    pub labels: PathBuf,
    pub weight: f64,
    pub space: FusionSpace,
    pub gflops_a: Option<f64>,
    pub gflops_b: Option<f64>,
    pub fused: Option<PathBuf>,
}

pub fn fuse(opts: &FuseOptions) -> Result<Value> {
    let a = LogitsTable::load(&opts.a, opts.gflops_a)?;
    let b = LogitsTable::load(&opts.b, opts.gflops_b)?;
    let labels = labels_from_csv(&fs::read_to_string(&opts.labels)?)?;
    let report = fuse_and_eval(&a, &b, &labels, opts.weight, opts.space)?;
    if let Some(path) = &opts.fused {
        late_fuse(&a, &b, opts.weight, opts.space)?.fused.save(path)?;
    }
    let hashes: BTreeMap<&str, String> = [("a", &opts.a), ("b", &opts.b), ("labels", &opts.labels)]
        .into_iter()
        .map(|(k, p)| Ok((k, file_hash(p)?)))
        .collect::<Result<_>>()?;
    Ok(json!({
        "command": "fuse",
        "input_hash": hashes,
        "report": report,
    }))
}

pub struct SaliencyOptions {
    pub fraction: f64,
    pub bins: usize,
    pub attribution: Attribution,
}

pub fn saliency(cfg: &ExperimentConfig, checkpoint_path: &Path, split: &DatasetSplit, opts: &SaliencyOptions, out: &Path) -> Result<Value> {
    let model: Model<f64> = checkpoint::load(checkpoint_path)?;
    let Model::Movt(movt) = &model else {
        return Err(Error::Config("saliency needs a movt checkpoint".into()));
    };
    classification_only(&model.config())?;
    start_run(out, cfg)?;
    let mut sets = Vec::with_capacity(split.test.len());
    let mut topk = String::from("video_id,rank,track_index,score\n");
    for s in &split.test {
        let label = s
            .label
            .class()
            .ok_or_else(|| Error::Validation("saliency needs class labels".into()))?;
        let mut scores = track_importance(movt, &s.set, label, opts.attribution)?;
        scores.video_id = sample_id(s);
        for (rank, i) in topk_tracks(&scores.scores, opts.fraction)?.into_iter().enumerate() {
            topk.push_str(&format!("{},{rank},{i},{}\n", scores.video_id, scores.scores[i]));
        }
        sets.push(scores);
    }
    let hist = importance_histogram(&sets, opts.bins)?;
    fs::write(out.join("scores.csv"), scores_csv(&sets))?;
    fs::write(out.join("histogram.csv"), histogram_csv(&hist))?;
    fs::write(out.join("topk.csv"), topk)?;
    let doc = json!({
        "command": "saliency",
        "checkpoint": checkpoint_path,
        "checkpoint_hash": file_hash(checkpoint_path)?,
        "config": cfg,
        "input_hash": dataset_hash(split)?,
        "fraction": opts.fraction,
        "attribution": opts.attribution,
        "videos": sets.len(),
        "mean_tracks_above_half": hist.mean_above_half,
        "histogram": hist,
    });
    write_json(&out.join("report.json"), &doc)?;
    Ok(doc)
}

pub fn flops(cfg: &ExperimentConfig, kind: ModelKind, tracks: usize, frames: usize) -> Result<Value> {
    let model = cfg.model(kind);
    Ok(json!({
        "command": "flops",
        "model": model,
        "tracks": tracks,
        "frames": frames,
        "params": count_params(&model),
        "gflops": count_flops(&model, tracks, frames),
        "ledger": ledger(&model, tracks, frames),
    }))
}

pub fn probe(cfg: &ExperimentConfig, checkpoint_path: &Path, split: &DatasetSplit, out: &Path) -> Result<Value> {
    let model: Model<f32> = checkpoint::load(checkpoint_path)?;
    start_run(out, cfg)?;
    let before = model.weights_hash();
    let result = linear_probe(&model, split, &cfg.probe)?;
    let doc = json!({
        "command": "probe",
        "checkpoint": checkpoint_path,
        "checkpoint_hash": file_hash(checkpoint_path)?,
        "source_weights_hash": before,
        "config": cfg,
        "input_hash": dataset_hash(split)?,
        "train_accuracy": result.train_accuracy,
        "test_accuracy": result.test_accuracy,
    });
    write_json(&out.join("report.json"), &doc)?;
    Ok(doc)
}
