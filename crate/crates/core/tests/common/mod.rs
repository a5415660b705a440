//! Helpers shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use movt_core::nn::encoder::EncoderCache;
use movt_core::nn::gradcheck::{central_diff, rel_error};
use movt_core::nn::layers::DropoutCache;
use movt_core::nn::spec::LayerCache;
use movt_core::nn::{AnyLayer, Dropout, EncoderLayer, Mode, Parameter, Tensor};
use movt_core::seed::{self, Rng};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-8;

/// Comparison of analytic and finite-difference gradients. Elements where
/// both values sit below the difference quotient's rounding noise
/// (`NOISE_ULPS·ε·scale/h`) cannot be resolved by the oracle; they are
/// counted instead of entering the relative error.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub max_rel: f64,
    pub checked: usize,
    pub below_noise: usize,
}

pub const NOISE_ULPS: f64 = 100.0;

pub fn compare(analytic: &[f64], numeric: &[f64], scale: f64) -> GradCheck {
    let noise = NOISE_ULPS * f64::EPSILON * scale.max(1.0) / FD_STEP;
    let mut out = GradCheck {
        max_rel: 0.0,
        checked: 0,
        below_noise: 0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        if a.abs() <= noise && n.abs() <= noise {
            out.below_noise += 1;
        } else {
            out.checked += 1;
            out.max_rel = out.max_rel.max(rel_error(a, n, FD_FLOOR));
        }
    }
    out
}

/// Uniform values in `[lo, hi)`, with a random sign when `signed`.
pub fn uniform(rng: &mut Rng, n: usize, lo: f64, hi: f64, signed: bool) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.random_range(lo..hi);
            if signed && rng.random::<bool>() { -v } else { v }
        })
        .collect()
}

pub fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

/// Anything with a forward/backward pair and parameters.
pub trait Differentiable: Clone {
    type Cache;
    fn forward(&self, x: &Tensor<f64>) -> (Tensor<f64>, Self::Cache);
    fn backward(&mut self, cache: &Self::Cache, gy: &Tensor<f64>) -> Tensor<f64>;
    fn params_mut(&mut self) -> Vec<&mut Parameter<f64>>;
}

impl Differentiable for AnyLayer<f64> {
    type Cache = LayerCache<f64>;
    fn forward(&self, x: &Tensor<f64>) -> (Tensor<f64>, Self::Cache) {
        AnyLayer::forward(self, x.clone(), &mut Mode::Eval).unwrap()
    }
    fn backward(&mut self, cache: &Self::Cache, gy: &Tensor<f64>) -> Tensor<f64> {
        AnyLayer::backward(self, cache, gy).unwrap()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        AnyLayer::params_mut(self)
    }
}

/// Dropout in training mode; every forward replays the same mask.
#[derive(Clone)]
pub struct TrainDropout {
    pub layer: Dropout,
    pub rng: Rng,
}

impl Differentiable for TrainDropout {
    type Cache = DropoutCache<f64>;
    fn forward(&self, x: &Tensor<f64>) -> (Tensor<f64>, Self::Cache) {
        let mut rng = self.rng.clone();
        self.layer.forward(x.clone(), &mut Mode::Train(&mut rng))
    }
    fn backward(&mut self, cache: &Self::Cache, gy: &Tensor<f64>) -> Tensor<f64> {
        Dropout::backward(cache, gy.clone())
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        Vec::new()
    }
}

/// An encoder block; training mode replays the same dropout masks.
#[derive(Clone)]
pub struct Block {
    pub layer: EncoderLayer<f64>,
    pub rng: Option<Rng>,
}

impl Differentiable for Block {
    type Cache = EncoderCache<f64>;
    fn forward(&self, x: &Tensor<f64>) -> (Tensor<f64>, Self::Cache) {
        match &self.rng {
            Some(r) => {
                let mut r = r.clone();
                self.layer.forward(x.clone(), &mut Mode::Train(&mut r)).unwrap()
            }
            None => self.layer.forward(x.clone(), &mut Mode::Eval).unwrap(),
        }
    }
    fn backward(&mut self, cache: &Self::Cache, gy: &Tensor<f64>) -> Tensor<f64> {
        self.layer.backward(cache, gy).unwrap()
    }
    fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.layer.params_mut()
    }
}

/// Replaces every parameter with uniform values in `±scale`.
pub fn randomize<L: Differentiable>(layer: &mut L, rng: &mut Rng, scale: f64) {
    for p in layer.params_mut() {
        for v in p.value.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
    }
}

fn probe_loss(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

/// Worst relative error of the analytic input and parameter gradients of
/// `Σ rᵢ·yᵢ` against central differences, with random probe weights `r`.
pub fn layer_grad_error<L: Differentiable>(layer: &L, x: &Tensor<f64>, rng: &mut Rng) -> GradCheck {
    let (y, cache) = layer.forward(x);
    let r = uniform(rng, y.len(), -1.0, 1.0, false);
    let mut work = layer.clone();
    for p in work.params_mut() {
        p.zero_grad();
    }
    let gx = work.backward(&cache, &tensor(y.shape(), r.clone()));
    let mut analytic = gx.data().to_vec();
    for p in work.params_mut() {
        analytic.extend_from_slice(p.grad.data());
    }

    let mut numeric = central_diff(x.data(), FD_STEP, |v| {
        probe_loss(&layer.forward(&tensor(x.shape(), v.to_vec())).0, &r)
    });
    let mut probe = layer.clone();
    let count = probe.params_mut().len();
    for pi in 0..count {
        let values = probe.params_mut()[pi].value.data().to_vec();
        let g = central_diff(&values, FD_STEP, |v| {
            probe.params_mut()[pi].value.data_mut().copy_from_slice(v);
            probe_loss(&probe.forward(x).0, &r)
        });
        probe.params_mut()[pi].value.data_mut().copy_from_slice(&values);
        numeric.extend(g);
    }
    let scale = y.data().iter().zip(&r).map(|(a, b)| (a * b).abs()).sum();
    compare(&analytic, &numeric, scale)
}

/// Central differences with a separate step per coordinate.
pub fn central_diff_steps(x: &[f64], steps: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let (orig, h) = (probe[i], steps[i]);
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Steps for a raw velocity tensor: `FD_STEP` in the units the network
/// sees, so `vx` and `vy` use `FD_STEP / velocity_scale`.
pub fn velocity_steps(len: usize, velocity_scale: f64) -> Vec<f64> {
    (0..len).map(|i| if i % 3 == 2 { FD_STEP } else { FD_STEP / velocity_scale }).collect()
}

pub fn test_rng(label: &str) -> Rng {
    seed::rng(0x5eed, label, 0)
}

pub const LAYER_TOL: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-4;

/// Gradient checks for every layer kind, dropout, the two losses and an
/// encoder block in both modes, each with its tolerance.
pub fn layer_gradient_cases() -> Vec<(&'static str, GradCheck, f64)> {
    use movt_core::nn::LayerSpec;
    let mut rng = test_rng("gradcheck");
    let mut out = Vec::new();
    let mut run = |name: &'static str, spec: LayerSpec, shape: &[usize], lo: f64, signed: bool, rng: &mut Rng| {
        let mut layer = spec.build::<f64>(rng).unwrap();
        randomize(&mut layer, rng, 0.8);
        let n = shape.iter().product();
        let x = tensor(shape, uniform(rng, n, lo, 1.0, signed));
        out.push((name, layer_grad_error(&layer, &x, rng), LAYER_TOL));
    };
    run("linear", LayerSpec::Linear { inputs: 5, outputs: 4 }, &[3, 5], -1.0, false, &mut rng);
    run("conv1d", LayerSpec::Conv1d { kernel: 3, inputs: 3, outputs: 4 }, &[2, 6, 3], -1.0, false, &mut rng);
    run("conv1d_even_kernel", LayerSpec::Conv1d { kernel: 4, inputs: 2, outputs: 3 }, &[2, 5, 2], -1.0, false, &mut rng);
    run("maxpool_time", LayerSpec::MaxpoolTime, &[2, 5, 3], -1.0, false, &mut rng);
    run("layer_norm", LayerSpec::LayerNorm { dim: 6 }, &[4, 6], -1.0, false, &mut rng);
    run("mhsa", LayerSpec::Mhsa { dim: 8, heads: 2 }, &[5, 8], -1.0, false, &mut rng);
    run("relu", LayerSpec::Relu, &[4, 5], 0.1, true, &mut rng);
    run("mean_pool", LayerSpec::MeanPool, &[5, 4], -1.0, false, &mut rng);

    let drop = TrainDropout {
        layer: Dropout { p: 0.3 },
        rng: test_rng("dropout-mask"),
    };
    let x = tensor(&[4, 6], uniform(&mut rng, 24, -1.0, 1.0, false));
    out.push(("dropout_train", layer_grad_error(&drop, &x, &mut rng), LAYER_TOL));
    out.push(("cross_entropy", cross_entropy_error(&mut rng), LAYER_TOL));
    out.push(("mse", mse_error(&mut rng), LAYER_TOL));

    for (name, train) in [("encoder_eval", false), ("encoder_train", true)] {
        let mut block = Block {
            layer: EncoderLayer::new(8, 2, 2, 0.2, &mut rng).unwrap(),
            rng: train.then(|| test_rng("encoder-mask")),
        };
        randomize(&mut block, &mut rng, 0.5);
        let x = tensor(&[4, 8], uniform(&mut rng, 32, -1.0, 1.0, false));
        out.push((name, layer_grad_error(&block, &x, &mut rng), COMPOSITE_TOL));
    }
    out
}

fn cross_entropy_error(rng: &mut Rng) -> GradCheck {
    use movt_core::nn::cross_entropy;
    let labels = [1usize, 4, 0];
    let z = uniform(rng, 15, -2.0, 2.0, false);
    let (_, g) = cross_entropy(&tensor(&[3, 5], z.clone()), &labels).unwrap();
    let num = central_diff(&z, FD_STEP, |v| cross_entropy(&tensor(&[3, 5], v.to_vec()), &labels).unwrap().0);
    compare(g.data(), &num, 1.0)
}

fn mse_error(rng: &mut Rng) -> GradCheck {
    use movt_core::nn::mse;
    let t = tensor(&[3, 4], uniform(rng, 12, -1.0, 1.0, false));
    let p = uniform(rng, 12, -1.0, 1.0, false);
    let (_, g) = mse(&tensor(&[3, 4], p.clone()), &t).unwrap();
    let num = central_diff(&p, FD_STEP, |v| mse(&tensor(&[3, 4], v.to_vec()), &t).unwrap().0);
    compare(g.data(), &num, 1.0)
}

/// A small classification MovT with `layers` encoder blocks.
pub fn tiny_movt_config(dim: usize, layers: usize, classes: usize) -> movt_core::MovTConfig {
    let mut c = movt_core::MovTConfig::default();
    c.embed_dim = dim;
    c.motion.mlp_hidden = dim;
    c.position_mlp_hidden = dim;
    c.transformer.layers = layers;
    c.transformer.heads = 2;
    c.transformer.ff_mult = 2;
    c.head = movt_core::HeadKind::Classification { classes };
    c
}

/// Random unscaled velocity `[N, T, 3]` (occlusion flags in channel 2) and
/// means `[N, 2]`.
pub fn random_movt_input(rng: &mut Rng, n: usize, t: usize) -> (Tensor<f64>, Tensor<f64>) {
    let mut v = Vec::with_capacity(n * t * 3);
    for _ in 0..n * t {
        v.push(rng.random_range(-0.02..0.02));
        v.push(rng.random_range(-0.02..0.02));
        v.push(if rng.random::<f64>() < 0.2 { 1.0 } else { 0.0 });
    }
    let m = uniform(rng, n * 2, 0.1, 0.9, false);
    (tensor(&[n, t, 3], v), tensor(&[n, 2], m))
}

/// Worst relative error of the cross-entropy gradient of a 4-block MovT
/// with respect to every parameter and every continuous input.
pub fn movt_end_to_end_error(seed: u64) -> GradCheck {
    use movt_core::nn::cross_entropy;
    use movt_core::MovTModel;
    let cfg = tiny_movt_config(4, 4, 3);
    let model = MovTModel::<f64>::new(cfg, seed).unwrap();
    let mut rng = test_rng("movt-e2e");
    let (vel, means) = random_movt_input(&mut rng, 3, 4);
    let label = [2usize];
    let loss = |m: &MovTModel<f64>, v: &Tensor<f64>, p: &Tensor<f64>| {
        let (f, _) = m.forward_raw(v, p, &mut Mode::Eval).unwrap();
        cross_entropy(&f.output, &label).unwrap().0
    };

    let mut work = model.clone();
    let (f, trace) = work.forward_raw(&vel, &means, &mut Mode::Eval).unwrap();
    let (_, g) = cross_entropy(&f.output, &label).unwrap();
    let grad = work.backward(&trace, &g.reshape(f.output.shape()).unwrap()).unwrap();

    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    // occlusion flags are discrete, so only the two velocity channels are probed
    let continuous: Vec<usize> = (0..vel.len()).filter(|i| i % 3 != 2).collect();
    let steps = velocity_steps(vel.len(), model.config.velocity_scale);
    let vnum = central_diff_steps(vel.data(), &steps, |v| loss(&model, &tensor(vel.shape(), v.to_vec()), &means));
    for &i in &continuous {
        analytic.push(grad.velocity.data()[i]);
        numeric.push(vnum[i]);
    }
    analytic.extend_from_slice(grad.means.data());
    numeric.extend(central_diff(means.data(), FD_STEP, |v| loss(&model, &vel, &tensor(means.shape(), v.to_vec()))));

    let mut probe = model.clone();
    let count = probe.params_mut().len();
    for pi in 0..count {
        analytic.extend_from_slice(work.params_mut()[pi].grad.data());
        let values = probe.params_mut()[pi].value.data().to_vec();
        let g = central_diff(&values, FD_STEP, |v| {
            probe.params_mut()[pi].value.data_mut().copy_from_slice(v);
            loss(&probe, &vel, &means)
        });
        probe.params_mut()[pi].value.data_mut().copy_from_slice(&values);
        numeric.extend(g);
    }
    compare(&analytic, &numeric, loss(&model, &vel, &means))
}

/// A normalized clip whose coordinates lie on the `1/1024` grid inside
/// `[0.25, 0.75]`, so shifting by grid multiples is exact in `f32`.
pub fn grid_set(rng: &mut Rng, frames: usize, tracks: usize) -> movt_core::PointTrackSet {
    use movt_core::trackio::TrackMeta;
    let pos = (0..frames * tracks * 2)
        .map(|_| rng.random_range(256u32..=768) as f32 / 1024.0)
        .collect();
    let occ = (0..frames * tracks).map(|_| u8::from(rng.random_bool(0.1))).collect();
    movt_core::PointTrackSet::new(
        frames,
        tracks,
        pos,
        occ,
        TrackMeta {
            normalized: true,
            ..Default::default()
        },
    )
    .unwrap()
}

fn random_tiny_movt(rng: &mut Rng, seed: u64) -> movt_core::MovTModel<f32> {
    let dim = [4, 8, 12][rng.random_range(0..3)];
    let mut cfg = tiny_movt_config(dim, rng.random_range(1..=3), rng.random_range(2..=8));
    cfg.transformer.heads = [1, 2, 4][rng.random_range(0..3)];
    movt_core::MovTModel::new(cfg, seed).unwrap()
}

/// Largest absolute logit change under a random track permutation, over
/// `trials` random `f32` models and clips.
pub fn permutation_max_change(trials: u64) -> f64 {
    use rand::seq::SliceRandom;
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = seed::rng(trial, "permutation", 0);
        let model = random_tiny_movt(&mut rng, trial);
        let (frames, tracks) = (rng.random_range(2..=12), rng.random_range(1..=24));
        let set = grid_set(&mut rng, frames, tracks);
        let mut order: Vec<usize> = (0..set.tracks()).collect();
        order.shuffle(&mut rng);
        let moved = set.select_tracks(&order).unwrap();
        let a = infer(&model, &set);
        let b = infer(&model, &moved);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((f64::from(*x) - f64::from(*y)).abs());
        }
    }
    worst
}

pub fn infer(model: &movt_core::MovTModel<f32>, set: &movt_core::PointTrackSet) -> Vec<f32> {
    use movt_core::model::MovTInput;
    model.forward(&MovTInput::from_set(set), &mut Mode::Eval).unwrap().0.output.data().to_vec()
}

/// Number of trials, out of `trials`, where a global grid-aligned offset
/// changed any motion embedding bit.
pub fn translation_violations(trials: u64) -> usize {
    use movt_core::trackio::{compute_velocity, translate};
    let mut bad = 0;
    for trial in 0..trials {
        let mut rng = seed::rng(trial, "translation", 0);
        let model = random_tiny_movt(&mut rng, trial);
        let (frames, tracks) = (rng.random_range(2..=12), rng.random_range(1..=24));
        let set = grid_set(&mut rng, frames, tracks);
        let c = [
            rng.random_range(-256i32..=256) as f32 / 1024.0,
            rng.random_range(-256i32..=256) as f32 / 1024.0,
        ];
        let shifted = translate(&set, c).unwrap();
        let a = model.motion_encode(&compute_velocity(&set)).unwrap();
        let b = model.motion_encode(&compute_velocity(&shifted)).unwrap();
        if a != b {
            bad += 1;
        }
    }
    bad
}

// --- brute-force metric oracles -------------------------------------------

pub fn oracle_argmax(v: &[f64]) -> usize {
    (0..v.len()).find(|&i| v.iter().all(|&x| v[i] >= x)).unwrap()
}

/// Softmax without the max shift; callers keep logits small.
pub fn oracle_confidence(logits: &[f64]) -> f64 {
    let z: f64 = logits.iter().map(|x| x.exp()).sum();
    logits.iter().map(|x| x.exp() / z).fold(0.0, f64::max)
}

pub fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

type Mat = [[f64; 3]; 3];

pub fn rotation_matrix(q: [f64; 4]) -> Mat {
    let [w, x, y, z] = q;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

fn matmul(a: &Mat, b: &Mat) -> Mat {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose(a: &Mat) -> Mat {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

/// Rotation angle of a rotation matrix in degrees, from its trace and its
/// skew-symmetric part.
pub fn matrix_angle_deg(r: &Mat) -> f64 {
    let c = (r[0][0] + r[1][1] + r[2][2] - 1.0) / 2.0;
    let s = ((r[2][1] - r[1][2]).powi(2) + (r[0][2] - r[2][0]).powi(2) + (r[1][0] - r[0][1]).powi(2)).sqrt() / 2.0;
    s.atan2(c).to_degrees()
}

/// RPE through rotation matrices.
pub fn oracle_rpe(pred: &[([f64; 3], [f64; 4])], truth: &[([f64; 3], [f64; 4])]) -> (f64, f64) {
    let steps = pred.len() - 1;
    let (mut st, mut sr) = (0.0, 0.0);
    for i in 0..steps {
        let dp: Vec<f64> = (0..3).map(|k| pred[i + 1].0[k] - pred[i].0[k]).collect();
        let dt: Vec<f64> = (0..3).map(|k| truth[i + 1].0[k] - truth[i].0[k]).collect();
        st += dp.iter().zip(&dt).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let rp = matmul(&transpose(&rotation_matrix(pred[i].1)), &rotation_matrix(pred[i + 1].1));
        let rt = matmul(&transpose(&rotation_matrix(truth[i].1)), &rotation_matrix(truth[i + 1].1));
        sr += matrix_angle_deg(&matmul(&rp, &transpose(&rt))).powi(2);
    }
    ((st / steps as f64).sqrt(), (sr / steps as f64).sqrt())
}

pub fn random_quat(rng: &mut Rng) -> [f64; 4] {
    loop {
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 {
            return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
        }
    }
}

fn random_records(rng: &mut Rng) -> Vec<movt_core::eval::PredictionRecord> {
    use movt_core::eval::PredictionRecord;
    let classes = rng.random_range(2..=6);
    let n = rng.random_range(1..=30);
    let integer = rng.random_bool(0.3);
    (0..n)
        .map(|i| {
            let logits = (0..classes)
                .map(|_| {
                    if integer {
                        f64::from(rng.random_range(-2i32..=2))
                    } else {
                        rng.random_range(-4.0..4.0)
                    }
                })
                .collect();
            PredictionRecord::classification(format!("r{i}"), logits, rng.random_range(0..classes))
        })
        .collect()
}

/// Mismatching instances out of `instances` random cases for each metric.
pub fn metric_oracle_failures(instances: u64) -> Vec<(&'static str, usize)> {
    use movt_core::eval::{coverage_curve, pearson_r, per_class_accuracy, rpe, top1_accuracy, Pose};
    let (mut top1, mut per_class, mut pearson, mut rpe_bad, mut coverage) = (0, 0, 0, 0, 0);
    for i in 0..instances {
        let mut rng = seed::rng(i, "metric-oracle", 0);
        let records = random_records(&mut rng);
        let class_of = |r: &movt_core::eval::PredictionRecord| r.label.class().unwrap();

        let hits = records.iter().filter(|r| oracle_argmax(&r.output) == class_of(r)).count();
        if top1_accuracy(&records).unwrap() != hits as f64 / records.len() as f64 {
            top1 += 1;
        }

        let pc = per_class_accuracy(&records, Some(6)).unwrap();
        let mut ok = true;
        for c in 0..6 {
            let members: Vec<_> = records.iter().filter(|r| class_of(r) == c).collect();
            if members.is_empty() {
                ok &= pc.missing.contains(&c) && !pc.accuracy.contains_key(&c);
            } else {
                let h = members.iter().filter(|r| oracle_argmax(&r.output) == c).count();
                ok &= pc.accuracy[&c] == h as f64 / members.len() as f64 && pc.counts[&c] == members.len();
            }
        }
        if !ok {
            per_class += 1;
        }

        let n = rng.random_range(2..=40);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0)).collect();
        if (pearson_r(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs() > 1e-9 {
            pearson += 1;
        }

        let steps = rng.random_range(2..=10);
        let mk = |rng: &mut Rng| -> Vec<([f64; 3], [f64; 4])> {
            (0..steps)
                .map(|_| ([rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)], random_quat(rng)))
                .collect()
        };
        let (p, t) = (mk(&mut rng), mk(&mut rng));
        let poses = |v: &[([f64; 3], [f64; 4])]| v.iter().map(|(a, b)| Pose::new(*a, *b).unwrap()).collect::<Vec<_>>();
        let (gt, gr) = rpe(&poses(&p), &poses(&t)).unwrap();
        let (ot, or) = oracle_rpe(&p, &t);
        if (gt - ot).abs() > 1e-9 * ot.max(1.0) || (gr - or).abs() > 1e-7 * or.max(1.0) {
            rpe_bad += 1;
        }

        let thresholds: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..1.0)).collect();
        let curve = coverage_curve(&records, &thresholds).unwrap();
        let mut ok = true;
        for (pt, &th) in curve.iter().zip(&thresholds) {
            let kept: Vec<_> = records.iter().filter(|r| oracle_confidence(&r.output) >= th).collect();
            let cov = kept.len() as f64 / records.len() as f64;
            let acc = (!kept.is_empty())
                .then(|| kept.iter().filter(|r| oracle_argmax(&r.output) == class_of(r)).count() as f64 / kept.len() as f64);
            ok &= pt.coverage == cov && pt.accuracy == acc;
        }
        if !ok {
            coverage += 1;
        }
    }
    vec![
        ("top1", top1),
        ("per_class", per_class),
        ("pearson", pearson),
        ("rpe", rpe_bad),
        ("coverage", coverage),
    ]
}

/// RPE of a trajectory against itself, and against a globally shifted copy.
pub fn rpe_special_cases() -> ((f64, f64), (f64, f64)) {
    use movt_core::eval::{rpe, Pose};
    let mut rng = test_rng("rpe-special");
    let truth: Vec<Pose> = (0..12)
        .map(|_| Pose::new([rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)], random_quat(&mut rng)).unwrap())
        .collect();
    let shifted: Vec<Pose> = truth
        .iter()
        .map(|p| Pose::new([p.translation[0] + 4.0, p.translation[1] - 2.5, p.translation[2] + 0.75], p.rotation).unwrap())
        .collect();
    (rpe(&truth, &truth).unwrap(), rpe(&shifted, &truth).unwrap())
}

// --- saliency ---------------------------------------------------------------

/// Worst relative error between each track's raw importance and the L2 norm
/// of its finite-difference sensitivities, on a tiny `f64` model.
pub fn saliency_fd_error(seed: u64) -> f64 {
    use movt_core::saliency::{input_gradient, raw_scores, Attribution};
    use movt_core::MovTModel;
    let model = MovTModel::<f64>::new(tiny_movt_config(4, 2, 3), seed).unwrap();
    let mut rng = seed::rng(seed, "saliency-fd", 0);
    let (vel, means) = random_movt_input(&mut rng, 3, 5);
    let label = 1;
    let (gv, gm) = input_gradient(&model, &vel, &means, label).unwrap();
    let raw = raw_scores(&vel, &means, &gv, &gm, Attribution::Gradient);
    let logit = |v: &Tensor<f64>, m: &Tensor<f64>| model.forward_raw(v, m, &mut Mode::Eval).unwrap().0.output.data()[label];
    let steps = velocity_steps(vel.len(), model.config.velocity_scale);
    let nv = central_diff_steps(vel.data(), &steps, |x| logit(&tensor(vel.shape(), x.to_vec()), &means));
    let nm = central_diff(means.data(), FD_STEP, |x| logit(&vel, &tensor(means.shape(), x.to_vec())));
    let per = vel.len() / 3;
    (0..3)
        .map(|k| {
            let sq: f64 = nv[k * per..(k + 1) * per].iter().chain(&nm[k * 2..k * 2 + 2]).map(|g| g * g).sum();
            rel_error(raw[k], sq.sqrt(), FD_FLOOR)
        })
        .fold(0.0, f64::max)
}

/// Whether two copies of the same track always receive bit-identical scores.
pub fn saliency_symmetry_holds(trials: u64) -> bool {
    use movt_core::saliency::{track_importance, Attribution};
    use movt_core::MovTModel;
    (0..trials).all(|seed| {
        let model = MovTModel::<f64>::new(tiny_movt_config(8, 2, 4), seed).unwrap();
        let mut rng = seed::rng(seed, "symmetry", 0);
        let set = grid_set(&mut rng, 6, 5);
        let dup = set.select_tracks(&[0, 1, 2, 3, 4, 2]).unwrap();
        let s = track_importance(&model, &dup, (seed % 4) as usize, Attribution::Gradient).unwrap();
        s.raw[2] == s.raw[5] && s.scores[2] == s.scores[5]
    })
}

/// Whether histogram counts add up to the number of scored tracks.
pub fn histogram_sums_hold(trials: u64) -> bool {
    use movt_core::saliency::{importance_histogram, ImportanceScores};
    (0..trials).all(|seed| {
        let mut rng = seed::rng(seed, "histogram", 0);
        let videos = rng.random_range(0..6);
        let sets: Vec<ImportanceScores> = (0..videos)
            .map(|v| {
                let n = rng.random_range(1..40);
                ImportanceScores::from_raw(format!("v{v}"), uniform(&mut rng, n, 0.0, 3.0, false))
            })
            .collect();
        let total: usize = sets.iter().map(|s| s.scores.len()).sum();
        let bins = rng.random_range(1..12);
        let h = importance_histogram(&sets, bins).unwrap();
        h.counts.iter().sum::<u64>() as usize == total && h.counts.len() == bins
    })
}

// --- formats and determinism ----------------------------------------------

/// A random clip exercising every optional field of the track format.
pub fn random_track_set(rng: &mut Rng) -> movt_core::PointTrackSet {
    use movt_core::trackio::TrackMeta;
    use movt_core::Label;
    let frames = rng.random_range(2..=9);
    let tracks = rng.random_range(1..=9);
    let normalized = rng.random_bool(0.5);
    let pos = (0..frames * tracks * 2)
        .map(|_| if normalized { rng.random::<f32>() } else { rng.random_range(-500.0f32..2000.0) })
        .collect();
    let occ = (0..frames * tracks).map(|_| u8::from(rng.random_bool(0.3))).collect();
    let opt = |rng: &mut Rng, hi: f32| rng.random_bool(0.5).then(|| rng.random_range(1.0..hi));
    let label = match rng.random_range(0..3) {
        0 => None,
        1 => Some(Label::Class(rng.random_range(0..1000))),
        _ => {
            let n = rng.random_range(1..8);
            Some(Label::Regression(uniform(rng, n, -5.0, 5.0, false).into_iter().map(|v| v as f32).collect()))
        }
    };
    let id_len = rng.random_range(0..12);
    let video_id: String = (0..id_len).map(|_| ['a', 'z', '_', '0', 'é', '動'][rng.random_range(0..6)]).collect();
    let meta = TrackMeta {
        video_id,
        width: opt(rng, 4000.0),
        height: opt(rng, 4000.0),
        fps: opt(rng, 120.0),
        label,
        normalized,
    };
    movt_core::PointTrackSet::new(frames, tracks, pos, occ, meta).unwrap()
}

/// Instances, out of `n`, whose encode → decode → encode trip changes a bit.
pub fn ptrk_round_trip_failures(n: u64) -> usize {
    use movt_core::trackio::{decode_tracks, encode_tracks};
    (0..n)
        .filter(|&i| {
            let set = random_track_set(&mut seed::rng(i, "ptrk", 0));
            let bytes = encode_tracks(&set).unwrap();
            let back = decode_tracks(&bytes).unwrap();
            back != set || encode_tracks(&back).unwrap() != bytes
        })
        .count()
}

/// Instances, out of `n`, where a random model's checkpoint trip changes a
/// weight bit or a forward output.
pub fn checkpoint_round_trip_failures(n: u64) -> usize {
    use movt_core::model::checkpoint::{decode, encode};
    use movt_core::{Model, ModelConfig, PixTConfig};
    (0..n)
        .filter(|&i| {
            let mut rng = seed::rng(i, "checkpoint", 0);
            let config = if rng.random_bool(0.5) {
                let mut c = tiny_movt_config([2, 4][rng.random_range(0..2)], rng.random_range(1..=2), rng.random_range(2..=5));
                c.transformer.heads = 1;
                ModelConfig::Movt(c)
            } else {
                let mut c = PixTConfig::default();
                c.embed_dim = 2;
                c.pixel.mlp_hidden = 2;
                c.transformer.layers = 1;
                c.transformer.heads = 1;
                c.patch = 4;
                c.height = 8;
                c.width = 8;
                ModelConfig::Pixt(c)
            };
            let mut model = Model::<f32>::new(&config, i).unwrap();
            for p in model.params_mut() {
                for v in p.value.data_mut() {
                    *v = f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF);
                }
            }
            let bytes = encode(&model).unwrap();
            let back: Model<f32> = decode(&bytes, Some(&config)).unwrap();
            let same_bits = model
                .params()
                .iter()
                .zip(back.params())
                .all(|(a, b)| a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
            !same_bits || encode(&back).unwrap() != bytes
        })
        .count()
}

/// A small synthetic split built in memory.
pub fn synthetic_split(cfg: &movt_core::synthgen::GenConfig, seed: u64) -> movt_core::train::DatasetSplit {
    use movt_core::synthgen::generate_samples;
    use movt_core::trackio::Sample;
    let samples = generate_samples(cfg)
        .unwrap()
        .into_iter()
        .map(|(e, set)| Sample {
            file: e.file,
            split: e.split,
            label: e.label,
            set,
        })
        .collect();
    movt_core::train::DatasetSplit::from_samples(samples, seed).unwrap()
}

pub fn small_gen(per_class: usize) -> movt_core::synthgen::GenConfig {
    movt_core::synthgen::GenConfig {
        train_per_class: per_class,
        val_per_class: 1,
        test_per_class: 1,
        frames: 8,
        tracks: 10,
        ..Default::default()
    }
}

/// Two trainings from one seed; returns whether the reports, minus wall
/// time, serialize to the same bytes.
pub fn train_report_repeats() -> bool {
    use movt_core::train::{train, TrainConfig};
    use movt_core::{Model, ModelConfig};
    let split = synthetic_split(&small_gen(3), 0);
    let cfg = TrainConfig {
        epochs: 3,
        lr: 1e-3,
        batch_size: 4,
        seed: 7,
        ..Default::default()
    };
    let run = || {
        let model = Model::<f32>::new(&ModelConfig::Movt(tiny_movt_config(8, 1, 8)), 7).unwrap();
        serde_json::to_string(&train(model, &split, &cfg).unwrap().1.without_timing()).unwrap()
    };
    run() == run()
}
