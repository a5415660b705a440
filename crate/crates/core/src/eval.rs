//! Metrics and analysis curves: top-1, per-class accuracy, Pearson's r,
//! relative pose error, confidence-coverage curves and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Real;
use crate::trackio::{Label, Sample};

/// Tolerance on probability vectors summing to one.
pub const PROB_TOL: f64 = 1e-5;

/// One evaluated clip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    /// Raw head output: logits or regression values.
    pub output: Vec<f64>,
    /// Softmax of `output` for classification; empty for regression.
    pub probabilities: Vec<f64>,
    pub label: Label,
}

impl PredictionRecord {
    pub fn classification(id: impl Into<String>, logits: Vec<f64>, label: usize) -> Self {
        let probabilities = softmax(&logits);
        PredictionRecord {
            id: id.into(),
            output: logits,
            probabilities,
            label: Label::Class(label as u32),
        }
    }

    pub fn predicted(&self) -> usize {
        argmax(&self.probabilities)
    }

    pub fn confidence(&self) -> f64 {
        self.probabilities.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn class(&self) -> Result<usize> {
        self.label
            .class()
            .ok_or_else(|| Error::invalid(format!("{}: record has no class label", self.id)))
    }

    fn check(&self) -> Result<()> {
        let s: f64 = self.probabilities.iter().sum();
        if self.probabilities.is_empty() || (s - 1.0).abs() > PROB_TOL {
            return Err(Error::validation(format!(
                "{}: probabilities sum to {s}, not 1",
                self.id
            )));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode predictions for every sample, in input order.
pub fn predict<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<Vec<PredictionRecord>> {
    let classification = model.head().classes().is_some();
    samples
        .iter()
        .map(|s| {
            let out = model.infer(&s.set)?;
            let output: Vec<f64> = out.output.data().iter().map(|v| v.as_f64()).collect();
            let probabilities = if classification { softmax(&output) } else { Vec::new() };
            Ok(PredictionRecord {
                id: sample_id(s),
                output,
                probabilities,
                label: s.label.clone(),
            })
        })
        .collect()
}

/// Stable id of a sample: its video id, or its file name when that is empty.
pub fn sample_id(s: &Sample) -> String {
    if s.set.video_id().is_empty() {
        s.file.clone()
    } else {
        s.set.video_id().to_string()
    }
}

pub fn top1_accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("top-1 accuracy of an empty record set"));
    }
    let mut correct = 0usize;
    for r in records {
        r.check()?;
        if r.predicted() == r.class()? {
            correct += 1;
        }
    }
    Ok(correct as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerClass {
    /// Class → correct fraction, for classes with at least one record.
    pub accuracy: BTreeMap<usize, f64>,
    pub counts: BTreeMap<usize, usize>,
    /// Classes in `0..classes` that have no record and were omitted.
    pub missing: Vec<usize>,
}

/// Per-class accuracy. With `classes` given, classes without records are
/// listed in `missing` rather than reported.
pub fn per_class_accuracy(records: &[PredictionRecord], classes: Option<usize>) -> Result<PerClass> {
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        r.check()?;
        let c = r.class()?;
        let e = hits.entry(c).or_default();
        e.1 += 1;
        if r.predicted() == c {
            e.0 += 1;
        }
    }
    let missing = match classes {
        Some(k) => (0..k).filter(|c| !hits.contains_key(c)).collect(),
        None => Vec::new(),
    };
    Ok(PerClass {
        accuracy: hits.iter().map(|(&c, &(h, n))| (c, h as f64 / n as f64)).collect(),
        counts: hits.iter().map(|(&c, &(_, n))| (c, n)).collect(),
        missing,
    })
}

/// `class,accuracy,count`
pub fn per_class_csv(pc: &PerClass) -> String {
    let mut s = String::from("class,accuracy,count\n");
    for (c, a) in &pc.accuracy {
        let _ = writeln!(s, "{c},{a},{}", pc.counts[c]);
    }
    s
}

/// `class,accuracy_a,accuracy_b` over classes present in both, for scatter
/// plots comparing two models.
pub fn paired_per_class_csv(a: &PerClass, b: &PerClass) -> String {
    let mut s = String::from("class,accuracy_a,accuracy_b\n");
    for (c, x) in &a.accuracy {
        if let Some(y) = b.accuracy.get(c) {
            let _ = writeln!(s, "{c},{x},{y}");
        }
    }
    s
}

/// Sample Pearson correlation.
pub fn pearson_r(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predictions vs {} targets", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation("need at least two points".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Rigid pose: translation in meters and a unit quaternion `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Pose {
    pub translation: [f64; 3],
    pub rotation: [f64; 4],
}

pub const QUATERNION_TOL: f64 = 1e-6;

impl Pose {
    pub fn new(translation: [f64; 3], rotation: [f64; 4]) -> Result<Self> {
        let n = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (n - 1.0).abs() > QUATERNION_TOL {
            return Err(Error::validation(format!("quaternion norm {n} is not 1")));
        }
        Ok(Pose { translation, rotation })
    }
}

pub fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = a;
    let [bw, bx, by, bz] = b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

pub fn quat_conj(q: [f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Rotation angle of a unit quaternion in degrees, in `[0, 180]`.
pub fn quat_angle_deg(q: [f64; 4]) -> f64 {
    let v = (q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    (2.0 * v.atan2(q[0].abs())).to_degrees()
}

/// Consecutive-step relative pose error: `(translational RMSE in meters,
/// rotational RMSE in degrees)`.
pub fn rpe(pred: &[Pose], truth: &[Pose]) -> Result<(f64, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("{} predicted vs {} true poses", pred.len(), truth.len())));
    }
    if pred.len() < 2 {
        return Err(Error::invalid("relative pose error needs at least two poses"));
    }
    for p in pred.iter().chain(truth) {
        Pose::new(p.translation, p.rotation)?;
    }
    let steps = (pred.len() - 1) as f64;
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..pred.len() - 1 {
        let mut e = 0.0;
        for k in 0..3 {
            let d = (pred[i + 1].translation[k] - pred[i].translation[k])
                - (truth[i + 1].translation[k] - truth[i].translation[k]);
            e += d * d;
        }
        st += e;
        let rp = quat_mul(quat_conj(pred[i].rotation), pred[i + 1].rotation);
        let rt = quat_mul(quat_conj(truth[i].rotation), truth[i + 1].rotation);
        let a = quat_angle_deg(quat_mul(rp, quat_conj(rt)));
        sr += a * a;
    }
    Ok(((st / steps).sqrt(), (sr / steps).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoveragePoint {
    pub threshold: f64,
    pub coverage: f64,
    /// `None` when no record reaches the threshold.
    pub accuracy: Option<f64>,
}

/// Marker written for undefined accuracies in CSV output.
pub const UNDEFINED: &str = "NA";

pub fn coverage_curve(records: &[PredictionRecord], thresholds: &[f64]) -> Result<Vec<CoveragePoint>> {
    for r in records {
        r.check()?;
    }
    thresholds
        .iter()
        .map(|&t| {
            let mut kept = 0usize;
            let mut correct = 0usize;
            for r in records {
                if r.confidence() >= t {
                    kept += 1;
                    if r.predicted() == r.class()? {
                        correct += 1;
                    }
                }
            }
            Ok(CoveragePoint {
                threshold: t,
                coverage: if records.is_empty() { 0.0 } else { kept as f64 / records.len() as f64 },
                accuracy: (kept > 0).then(|| correct as f64 / kept as f64),
            })
        })
        .collect()
}

/// `threshold,coverage,accuracy`; undefined accuracy is written as `NA`.
pub fn coverage_csv(curve: &[CoveragePoint]) -> String {
    let mut s = String::from("threshold,coverage,accuracy\n");
    for p in curve {
        let acc = p.accuracy.map_or_else(|| UNDEFINED.to_string(), |a| a.to_string());
        let _ = writeln!(s, "{},{},{acc}", p.threshold, p.coverage);
    }
    s
}

fn label_cell(l: &Label) -> String {
    match l {
        Label::Class(c) => c.to_string(),
        Label::Regression(v) => v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";"),
    }
}

/// `id,label,e0..e{D-1}` with nine significant digits per component.
pub fn embeddings_csv(rows: &[(String, Label, Vec<f64>)]) -> String {
    let dim = rows.first().map_or(0, |r| r.2.len());
    let mut s = String::from("id,label");
    for i in 0..dim {
        let _ = write!(s, ",e{i}");
    }
    s.push('\n');
    for (id, label, e) in rows {
        let _ = write!(s, "{id},{}", label_cell(label));
        for v in e {
            let _ = write!(s, ",{v:.8e}");
        }
        s.push('\n');
    }
    s
}

/// Eval-mode `E_F` of every sample, in input order.
pub fn embeddings<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<Vec<(String, Label, Vec<f64>)>> {
    samples
        .iter()
        .map(|s| {
            let e = model.infer(&s.set)?.embedding;
            Ok((sample_id(s), s.label.clone(), e.data().iter().map(|v| v.as_f64()).collect()))
        })
        .collect()
}

pub fn export_embeddings<F: Real>(model: &Model<F>, samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, embeddings_csv(&embeddings(model, samples)?))?;
    Ok(())
}
