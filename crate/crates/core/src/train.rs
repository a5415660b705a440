//! Training protocol: shuffled minibatches, AdamW with global-norm clipping,
//! a plateau scheduler on validation loss, and best-checkpoint retention.
//! Also clip aggregation, training-set reduction and linear probing.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, argmax};
use crate::model::{HeadKind, Model, Prepared};
use crate::nn::{self, adamw_step, clip_grad_norm, AdamW, Linear, Mode, Parameter, PlateauConfig, PlateauScheduler, Real, Tensor};
use crate::seed;
use crate::trackio::{self, Label, Sample, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy for classification heads, MSE for regression heads.
    Auto,
    CrossEntropy,
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub max_norm: f64,
    pub scheduler: PlateauConfig,
    pub adamw: AdamW,
    pub loss: LossKind,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            lr: 1e-4,
            batch_size: 32,
            seed: 0,
            max_norm: 1.0,
            scheduler: PlateauConfig::default(),
            adamw: AdamW::default(),
            loss: LossKind::Auto,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    /// `lr = 0` is admitted as a frozen-weights diagnostic.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail("lr must be a finite non-negative number");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if !(self.max_norm > 0.0) {
            return fail("max_norm must be positive");
        }
        if !(self.scheduler.factor > 0.0 && self.scheduler.factor < 1.0) {
            return fail("scheduler.factor must lie in (0, 1)");
        }
        if self.scheduler.patience < 1 {
            return fail("scheduler.patience must be at least 1");
        }
        Ok(())
    }

    fn loss_for(&self, head: HeadKind) -> Result<LossKind> {
        match (self.loss, head) {
            (LossKind::Auto, HeadKind::Classification { .. }) | (LossKind::CrossEntropy, HeadKind::Classification { .. }) => {
                Ok(LossKind::CrossEntropy)
            }
            (LossKind::Auto, HeadKind::Regression { .. }) | (LossKind::Mse, HeadKind::Regression { .. }) => Ok(LossKind::Mse),
            (l, h) => Err(Error::Config(format!("loss {l:?} does not fit head {h:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Top-1 accuracy for classification, mean squared error for regression.
    pub val_metric: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub best_val_metric: f64,
    pub wall_time_secs: f64,
    pub checkpoint: Option<String>,
    /// SHA-256 of the retained weights.
    pub weights_hash: String,
}

impl TrainReport {
    /// Everything except wall time, for determinism comparisons.
    pub fn without_timing(&self) -> TrainReport {
        TrainReport {
            wall_time_secs: 0.0,
            ..self.clone()
        }
    }
}

/// Train/val/test lists of labeled clips. `Sample::set.video_id()` groups
/// clips of one video.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Grouping key of a clip: its video id, or its file when the id is empty.
pub fn group_key(s: &Sample) -> &str {
    if s.set.video_id().is_empty() {
        &s.file
    } else {
        s.set.video_id()
    }
}

/// Fraction of training videos moved to validation when a manifest has no
/// validation split.
pub const VAL_FALLBACK_FRACTION: f64 = 0.1;

impl DatasetSplit {
    /// Splits loaded samples by their manifest split. When no sample is
    /// marked `val`, a stratified 10% of training videos becomes the
    /// validation set.
    pub fn from_samples(samples: Vec<Sample>, seed: u64) -> Result<Self> {
        let mut out = DatasetSplit::default();
        for s in samples {
            match s.split {
                Split::Train => out.train.push(s),
                Split::Val => out.val.push(s),
                Split::Test => out.test.push(s),
            }
        }
        if out.val.is_empty() && !out.train.is_empty() {
            out.carve_validation(seed)?;
        }
        out.check_disjoint()?;
        Ok(out)
    }

    pub fn load(dir: impl AsRef<std::path::Path>, seed: u64) -> Result<Self> {
        Self::from_samples(trackio::load_dataset(dir)?, seed)
    }

    fn carve_validation(&mut self, seed: u64) -> Result<()> {
        // videos grouped by class of their first clip
        let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        for s in &self.train {
            let g = group_key(s).to_string();
            if seen.insert(g.clone()) {
                by_class.entry(stratum(&s.label)).or_default().push(g);
            }
        }
        let mut moved = BTreeSet::new();
        for (i, (_, groups)) in by_class.iter().enumerate() {
            if groups.len() < 2 {
                continue;
            }
            let k = ((groups.len() as f64 * VAL_FALLBACK_FRACTION).round() as usize).max(1);
            let pick = trackio::subsample_indices(groups.len(), k, seed::derive(seed, "val_split", i as u64))?;
            moved.extend(pick.into_iter().map(|j| groups[j].clone()));
        }
        let (val, train): (Vec<_>, Vec<_>) = std::mem::take(&mut self.train)
            .into_iter()
            .partition(|s| moved.contains(group_key(s)));
        self.train = train;
        self.val = val;
        Ok(())
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let keys = |v: &[Sample]| v.iter().map(|s| group_key(s).to_string()).collect::<BTreeSet<_>>();
        let (a, b, c) = (keys(&self.train), keys(&self.val), keys(&self.test));
        if let Some(k) = a.intersection(&b).chain(a.intersection(&c)).chain(b.intersection(&c)).next() {
            return Err(Error::validation(format!("video {k} appears in more than one split")));
        }
        Ok(())
    }
}

fn stratum(label: &Label) -> String {
    match label {
        Label::Class(c) => format!("{c:010}"),
        Label::Regression(_) => String::new(),
    }
}

/// Keeps `⌈fraction·count⌉` training clips of every class, sampled without
/// replacement; val and test are untouched. Regression sets form one stratum.
pub fn reduce_training_set(split: &DatasetSplit, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut by_class: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in split.train.iter().enumerate() {
        by_class.entry(stratum(&s.label)).or_default().push(i);
    }
    let mut keep = Vec::new();
    for (ci, (_, idx)) in by_class.iter().enumerate() {
        let k = ((fraction * idx.len() as f64).ceil() as usize).clamp(1, idx.len());
        let pick = trackio::subsample_indices(idx.len(), k, seed::derive(seed, "reduce", ci as u64))?;
        keep.extend(pick.into_iter().map(|j| idx[j]));
    }
    keep.sort_unstable();
    Ok(DatasetSplit {
        train: keep.into_iter().map(|i| split.train[i].clone()).collect(),
        val: split.val.clone(),
        test: split.test.clone(),
    })
}

/// Mean of per-clip probability vectors, then argmax (ties to the lowest
/// class).
pub fn aggregate_clips(clip_probs: &[Vec<f64>]) -> Result<usize> {
    let first = clip_probs.first().ok_or_else(|| Error::invalid("no clips to aggregate"))?;
    let c = first.len();
    let mut mean = vec![0.0; c];
    for p in clip_probs {
        if p.len() != c {
            return Err(Error::shape(format!("clip vectors of length {c} and {}", p.len())));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > eval::PROB_TOL {
            return Err(Error::validation(format!("clip probabilities sum to {s}")));
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= clip_probs.len() as f64);
    Ok(argmax(&mean))
}

struct Prepped<F> {
    input: Prepared<F>,
    label: Label,
}

fn prepare_all<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<Vec<Prepped<F>>> {
    samples
        .iter()
        .map(|s| {
            Ok(Prepped {
                input: model.prepare(&s.set)?,
                label: s.label.clone(),
            })
        })
        .collect()
}

/// Loss and output gradient of one clip.
fn clip_loss<F: Real>(loss: LossKind, output: &Tensor<F>, label: &Label) -> Result<(F, Tensor<F>)> {
    let c = output.len();
    match loss {
        LossKind::CrossEntropy => {
            let class = label
                .class()
                .ok_or_else(|| Error::validation("classification head needs class labels"))?;
            let (l, g) = nn::cross_entropy(&output.clone().reshape(&[1, c])?, &[class])?;
            Ok((l, g.reshape(&[c])?))
        }
        _ => {
            let t = label
                .target()
                .ok_or_else(|| Error::validation("regression head needs vector labels"))?;
            let target = Tensor::from_vec(&[t.len()], t.iter().map(|&v| F::of_f32(v)).collect())?;
            nn::mse(output, &target)
        }
    }
}

/// Mean loss and metric over a set in eval mode.
fn evaluate<F: Real>(model: &Model<F>, loss: LossKind, data: &[Prepped<F>]) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut hits = 0usize;
    let mut sq = 0.0;
    for p in data {
        let (f, _) = model.forward_prepared(&p.input, &mut Mode::Eval)?;
        let (l, _) = clip_loss(loss, &f.output, &p.label)?;
        total += l.as_f64();
        if loss == LossKind::CrossEntropy {
            let out: Vec<f64> = f.output.data().iter().map(|v| v.as_f64()).collect();
            if Some(argmax(&out)) == p.label.class() {
                hits += 1;
            }
        } else {
            sq += l.as_f64();
        }
    }
    let n = data.len() as f64;
    let metric = if loss == LossKind::CrossEntropy { hits as f64 / n } else { sq / n };
    Ok((total / n, metric))
}

fn check_labels(head: HeadKind, samples: &[Sample]) -> Result<()> {
    for s in samples {
        match (head, &s.label) {
            (HeadKind::Classification { classes }, Label::Class(c)) if (*c as usize) < classes => {}
            (HeadKind::Regression { dim }, Label::Regression(v)) if v.len() == dim => {}
            (h, l) => {
                return Err(Error::validation(format!(
                    "{}: label {l:?} does not fit head {h:?}",
                    s.file
                )))
            }
        }
    }
    Ok(())
}

/// Trains `model` and returns the weights with the lowest validation loss.
pub fn train<F: Real>(model: Model<F>, split: &DatasetSplit, cfg: &TrainConfig) -> Result<(Model<F>, TrainReport)> {
    train_with(model, split, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F: Real>(
    mut model: Model<F>,
    split: &DatasetSplit,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Model<F>, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    if split.val.is_empty() {
        return Err(Error::invalid("validation split is empty"));
    }
    let head = model.head();
    let loss = cfg.loss_for(head)?;
    check_labels(head, &split.train)?;
    check_labels(head, &split.val)?;

    let start = Instant::now();
    let train_data = prepare_all(&model, &split.train)?;
    let val_data = prepare_all(&model, &split.val)?;
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.scheduler);
    let mut best: Option<(Model<F>, usize, f64, f64)> = None;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", epoch as u64));
        let mut dropout_rng = seed::rng(cfg.seed, "dropout", epoch as u64);
        let lr = sched.lr;
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = F::of(1.0 / batch.len() as f64);
            for &i in batch {
                let p = &train_data[i];
                let (f, trace) = model.forward_prepared(&p.input, &mut Mode::Train(&mut dropout_rng))?;
                let (l, mut g) = clip_loss(loss, &f.output, &p.label)?;
                if !l.as_f64().is_finite() {
                    return Err(Error::NumericFault(format!("non-finite loss at epoch {epoch}, batch {b}")));
                }
                epoch_loss += l.as_f64();
                g.data_mut().iter_mut().for_each(|v| *v *= scale);
                model.backward(&trace, &g)?;
            }
            let mut params = model.params_mut();
            if params.iter().any(|p| p.grad.data().iter().any(|v| !v.as_f64().is_finite())) {
                return Err(Error::NumericFault(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            clip_grad_norm(&mut params, cfg.max_norm);
            adamw_step(&mut params, lr, &cfg.adamw);
        }
        let (val_loss, val_metric) = evaluate(&model, loss, &val_data)?;
        if !val_loss.is_finite() {
            return Err(Error::NumericFault(format!("non-finite validation loss at epoch {epoch}")));
        }
        sched.step(val_loss);
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / train_data.len() as f64,
            val_loss,
            val_metric,
            lr,
        };
        on_epoch(&rec);
        records.push(rec);
        if best.as_ref().is_none_or(|b| val_loss < b.2) {
            best = Some((model.clone(), epoch, val_loss, val_metric));
        }
    }
    let (best_model, best_epoch, best_val_loss, best_val_metric) = best.expect("at least one epoch");
    let report = TrainReport {
        epochs: records,
        best_epoch,
        best_val_loss,
        best_val_metric,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checkpoint: None,
        weights_hash: best_model.weights_hash(),
    };
    Ok((best_model, report))
}

/// Validation loss and metric of a model, as the training loop computes them.
pub fn validation_metrics<F: Real>(model: &Model<F>, samples: &[Sample], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let loss = cfg.loss_for(model.head())?;
    evaluate(model, loss, &prepare_all(model, samples)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 200,
            lr: 1e-2,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub head: Linear<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

fn probe_accuracy(head: &Linear<f64>, x: &[Vec<f64>], y: &[usize]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::invalid("probe evaluation set is empty"));
    }
    let mut hits = 0;
    for (e, &c) in x.iter().zip(y) {
        let (out, _) = head.forward(Tensor::from_vec(&[1, e.len()], e.clone())?)?;
        if argmax(out.data()) == c {
            hits += 1;
        }
    }
    Ok(hits as f64 / x.len() as f64)
}

/// Fits a single linear layer with cross-entropy on `(embedding, class)`
/// pairs and reports train and test accuracy.
pub fn fit_probe(
    train_x: &[Vec<f64>],
    train_y: &[usize],
    test_x: &[Vec<f64>],
    test_y: &[usize],
    classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let dim = train_x.first().ok_or_else(|| Error::invalid("probe training set is empty"))?.len();
    if let Some(bad) = train_x.iter().chain(test_x).find(|e| e.len() != dim) {
        return Err(Error::shape(format!("embedding of dim {} where {dim} expected", bad.len())));
    }
    if train_x.len() != train_y.len() || test_x.len() != test_y.len() {
        return Err(Error::shape("embeddings and labels differ in count"));
    }
    if let Some(&c) = train_y.iter().chain(test_y).find(|&&c| c >= classes) {
        return Err(Error::invalid(format!("label {c} outside [0, {classes})")));
    }
    let mut head = Linear::<f64>::new(dim, classes, &mut seed::rng(cfg.seed, "probe_init", 0));
    let hp = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "probe_shuffle", epoch as u64));
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let x: Vec<f64> = batch.iter().flat_map(|&i| train_x[i].iter().copied()).collect();
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let (out, cache) = head.forward(Tensor::from_vec(&[batch.len(), dim], x)?)?;
            let (_, g) = nn::cross_entropy(&out, &y)?;
            head.backward(&cache, &g)?;
            let mut params: Vec<&mut Parameter<f64>> = head.params_mut().into_iter().collect();
            adamw_step(&mut params, cfg.lr, &hp);
        }
    }
    Ok(ProbeResult {
        train_accuracy: probe_accuracy(&head, train_x, train_y)?,
        test_accuracy: probe_accuracy(&head, test_x, test_y)?,
        head,
    })
}

fn class_embeddings<F: Real>(model: &Model<F>, samples: &[Sample]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut x = Vec::with_capacity(samples.len());
    let mut y = Vec::with_capacity(samples.len());
    for (_, label, e) in eval::embeddings(model, samples)? {
        x.push(e);
        y.push(
            label
                .class()
                .ok_or_else(|| Error::validation("linear probing needs class labels"))?,
        );
    }
    Ok((x, y))
}

/// Frozen-feature probe: `E_F` from `model` on the target split, a fresh
/// linear classifier trained on the target train set, accuracy on its test set.
pub fn linear_probe<F: Real>(model: &Model<F>, split: &DatasetSplit, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let (tx, ty) = class_embeddings(model, &split.train)?;
    let (vx, vy) = class_embeddings(model, &split.test)?;
    if let Some(e) = tx.first() {
        if e.len() != model.config().model_dim() {
            return Err(Error::shape("embedding width differs from the model width"));
        }
    }
    let classes = ty.iter().chain(&vy).copied().max().map_or(0, |m| m + 1);
    fit_probe(&tx, &ty, &vx, &vy, classes, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trackio::TrackMeta;
    use crate::trackio::PointTrackSet;
    use rand::{Rng as _, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(id: &str, class: u32, split: Split) -> Sample {
        let set = PointTrackSet::new(
            2,
            1,
            vec![0.5; 4],
            vec![0; 2],
            TrackMeta {
                video_id: id.into(),
                normalized: true,
                ..Default::default()
            },
        )
        .unwrap();
        Sample {
            file: format!("{id}.ptrk"),
            split,
            label: Label::Class(class),
            set,
        }
    }

    fn classes(n: usize, per: usize) -> DatasetSplit {
        let train = (0..n)
            .flat_map(|c| (0..per).map(move |i| sample(&format!("c{c}_{i}"), c as u32, Split::Train)))
            .collect();
        DatasetSplit {
            train,
            ..Default::default()
        }
    }

    #[test]
    fn reduce_identity_and_arithmetic() {
        let s = classes(10, 100);
        let same = reduce_training_set(&s, 1.0, 3).unwrap();
        let ids = |d: &DatasetSplit| d.train.iter().map(|s| s.file.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&same), ids(&s));
        let r = reduce_training_set(&s, 0.1, 3).unwrap();
        for c in 0..10u32 {
            assert_eq!(r.train.iter().filter(|s| s.label == Label::Class(c)).count(), 10);
        }
        assert_eq!(ids(&r), ids(&reduce_training_set(&s, 0.1, 3).unwrap()));
        assert!(reduce_training_set(&s, 0.0, 3).is_err());
        assert!(reduce_training_set(&s, 1.5, 3).is_err());
    }

    #[test]
    fn reduce_keeps_singleton_class() {
        let mut s = classes(2, 20);
        s.train.push(sample("lonely", 2, Split::Train));
        let r = reduce_training_set(&s, 0.1, 0).unwrap();
        assert_eq!(r.train.iter().filter(|s| s.label == Label::Class(2)).count(), 1);
        assert_eq!(r.train.len(), 2 + 2 + 1);
    }

    #[test]
    fn validation_fallback_is_stratified_and_disjoint() {
        let s = classes(4, 20);
        let d = DatasetSplit::from_samples(s.train, 5).unwrap();
        assert_eq!(d.val.len(), 8);
        for c in 0..4u32 {
            assert_eq!(d.val.iter().filter(|s| s.label == Label::Class(c)).count(), 2);
        }
        d.check_disjoint().unwrap();
    }

    #[test]
    fn shared_video_across_splits_is_rejected() {
        let d = DatasetSplit {
            train: vec![sample("v", 0, Split::Train)],
            val: vec![sample("v", 0, Split::Val)],
            test: vec![],
        };
        assert!(d.check_disjoint().is_err());
    }

    #[test]
    fn aggregate_cases() {
        assert_eq!(aggregate_clips(&[vec![0.1, 0.7, 0.2]]).unwrap(), 1);
        assert_eq!(aggregate_clips(&[vec![0.9, 0.1], vec![0.1, 0.9]]).unwrap(), 0);
        assert!(aggregate_clips(&[]).is_err());
        assert!(aggregate_clips(&[vec![0.5, 0.6]]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let clips: Vec<Vec<f64>> = (0..5)
                .map(|_| {
                    let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                    let s: f64 = v.iter().sum();
                    v.iter().map(|x| x / s).collect()
                })
                .collect();
            let mut mean = [0.0; 4];
            for c in &clips {
                for k in 0..4 {
                    mean[k] += c[k] / 5.0;
                }
            }
            let mut best = 0;
            for k in 1..4 {
                if mean[k] > mean[best] {
                    best = k;
                }
            }
            assert_eq!(aggregate_clips(&clips).unwrap(), best);
        }
    }

    #[test]
    fn probe_separates_separable_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut make = |n: usize| {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for i in 0..n {
                let c = i % 3;
                let mut e: Vec<f64> = (0..5).map(|_| rng.random_range(-0.2..0.2)).collect();
                e[c] += 2.0;
                x.push(e);
                y.push(c);
            }
            (x, y)
        };
        let (tx, ty) = make(60);
        let (vx, vy) = make(30);
        let r = fit_probe(&tx, &ty, &vx, &vy, 3, &ProbeConfig::default()).unwrap();
        assert_eq!(r.train_accuracy, 1.0);
        assert_eq!(r.test_accuracy, 1.0);
        assert!(fit_probe(&tx, &ty, &[vec![0.0; 4]], &[0], 3, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_ok());
        let ce = TrainConfig {
            loss: LossKind::CrossEntropy,
            ..Default::default()
        };
        assert!(ce.loss_for(HeadKind::Regression { dim: 2 }).is_err());
    }
}
