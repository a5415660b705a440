//! The layer set used by the track and pixel transformers.
//!
//! Each layer's `forward` takes its input by value and returns the output
//! together with whatever the backward pass needs; `backward` consumes the
//! upstream gradient, accumulates parameter gradients and returns the input
//! gradient.

use rand::Rng as _;

use super::ops::{dot, gemm_nn, gemm_nt, gemm_tn};
use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

/// Forward-pass mode. Dropout is active only in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

// ---------------------------------------------------------------------------

/// Affine map over the last axis: `y = x·W + b`, `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<F> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

pub struct LinearCache<F> {
    input: Tensor<F>,
}

impl<F: Real> Linear<F> {
    pub fn new(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: Parameter::fan_in_uniform(&[fan_in, fan_out], fan_in, rng),
            bias: Parameter::zeros(&[fan_out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: Tensor<F>) -> Result<(Tensor<F>, LinearCache<F>)> {
        let (rows, cols) = x.as_matrix();
        let (fin, fout) = (self.in_features(), self.out_features());
        if cols != fin {
            return Err(Error::shape(format!(
                "linear {fin}→{fout}: input last axis is {cols}"
            )));
        }
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(rows * fout);
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm_nn(x.data(), self.weight.value.data(), &mut out, rows, fin, fout);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = fout;
        Ok((Tensor::from_vec(&shape, out)?, LinearCache { input: x }))
    }

    pub fn backward(&mut self, cache: &LinearCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let x = &cache.input;
        let (rows, fin) = x.as_matrix();
        let fout = self.out_features();
        if gy.as_matrix() != (rows, fout) {
            return Err(Error::shape(format!(
                "linear backward: gradient {:?} does not match output [{rows}, {fout}]",
                gy.shape()
            )));
        }
        gemm_tn(x.data(), gy.data(), self.weight.grad.data_mut(), rows, fin, fout);
        let gb = self.bias.grad.data_mut();
        for row in gy.data().chunks_exact(fout) {
            for (g, &r) in gb.iter_mut().zip(row) {
                *g += r;
            }
        }
        let mut gx = vec![F::zero(); rows * fin];
        gemm_nt(gy.data(), self.weight.value.data(), &mut gx, rows, fout, fin);
        Tensor::from_vec(x.shape(), gx)
    }

    pub fn params(&self) -> [&Parameter<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

/// 1-D cross-correlation over the time axis of `[N, T, in]`, stride 1, zero
/// padding, output length `T`. Kernel stored `[k, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv1d<F> {
    pub weight: Parameter<F>,
    pub bias: Parameter<F>,
}

pub struct Conv1dCache<F> {
    input: Tensor<F>,
}

impl<F: Real> Conv1d<F> {
    pub fn new(kernel: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Conv1d {
            weight: Parameter::fan_in_uniform(&[kernel, fan_in, fan_out], kernel * fan_in, rng),
            bias: Parameter::zeros(&[fan_out]),
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        (s[0], s[1], s[2])
    }

    /// Offset of kernel tap 0 relative to the output step.
    fn left_pad(&self) -> usize {
        (self.dims().0 - 1) / 2
    }

    /// For tap `j`, the output steps `t` whose source `t + j − pad` is inside
    /// `[0, T)`, as `(first output step, first source step, count)`.
    fn tap_window(&self, j: usize, frames: usize) -> Option<(usize, usize, usize)> {
        let pad = self.left_pad() as isize;
        let shift = j as isize - pad;
        let t0 = (-shift).max(0) as usize;
        let t1 = ((frames as isize) - shift).min(frames as isize);
        if t1 <= t0 as isize {
            return None;
        }
        let count = t1 as usize - t0;
        Some((t0, (t0 as isize + shift) as usize, count))
    }

    pub fn forward(&self, x: Tensor<F>) -> Result<(Tensor<F>, Conv1dCache<F>)> {
        let (k, fin, fout) = self.dims();
        let [n, t, c] = match x.shape() {
            [a, b, c] => [*a, *b, *c],
            s => return Err(Error::shape(format!("conv1d expects [N, T, C], got {s:?}"))),
        };
        if c != fin {
            return Err(Error::shape(format!("conv1d {fin}→{fout}: input has {c} channels")));
        }
        let bias = self.bias.value.data();
        let mut out = Vec::with_capacity(n * t * fout);
        for _ in 0..n * t {
            out.extend_from_slice(bias);
        }
        let w = self.weight.value.data();
        for track in 0..n {
            let xs = &x.data()[track * t * fin..(track + 1) * t * fin];
            let ys = &mut out[track * t * fout..(track + 1) * t * fout];
            for j in 0..k {
                if let Some((to, src, cnt)) = self.tap_window(j, t) {
                    gemm_nn(
                        &xs[src * fin..(src + cnt) * fin],
                        &w[j * fin * fout..(j + 1) * fin * fout],
                        &mut ys[to * fout..(to + cnt) * fout],
                        cnt,
                        fin,
                        fout,
                    );
                }
            }
        }
        Ok((Tensor::from_vec(&[n, t, fout], out)?, Conv1dCache { input: x }))
    }

    pub fn backward(&mut self, cache: &Conv1dCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let (k, fin, fout) = self.dims();
        let x = &cache.input;
        let (n, t) = (x.shape()[0], x.shape()[1]);
        gy.expect_shape(&[n, t, fout], "conv1d backward")?;
        let mut gx = vec![F::zero(); n * t * fin];
        for track in 0..n {
            let xs = &x.data()[track * t * fin..(track + 1) * t * fin];
            let gys = &gy.data()[track * t * fout..(track + 1) * t * fout];
            let gb = self.bias.grad.data_mut();
            for row in gys.chunks_exact(fout) {
                for (g, &r) in gb.iter_mut().zip(row) {
                    *g += r;
                }
            }
            let gxs = &mut gx[track * t * fin..(track + 1) * t * fin];
            for j in 0..k {
                if let Some((to, src, cnt)) = self.tap_window(j, t) {
                    let gyb = &gys[to * fout..(to + cnt) * fout];
                    gemm_tn(
                        &xs[src * fin..(src + cnt) * fin],
                        gyb,
                        &mut self.weight.grad.data_mut()[j * fin * fout..(j + 1) * fin * fout],
                        cnt,
                        fin,
                        fout,
                    );
                    gemm_nt(
                        gyb,
                        &self.weight.value.data()[j * fin * fout..(j + 1) * fin * fout],
                        &mut gxs[src * fin..(src + cnt) * fin],
                        cnt,
                        fout,
                        fin,
                    );
                }
            }
        }
        Tensor::from_vec(x.shape(), gx)
    }

    pub fn params(&self) -> [&Parameter<F>; 2] {
        [&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

// ---------------------------------------------------------------------------

/// Max over the time axis: `[N, T, D] → [N, D]`. Ties go to the earliest step.
pub struct MaxPoolTime;

pub struct MaxPoolCache {
    argmax: Vec<usize>,
    frames: usize,
}

impl MaxPoolTime {
    pub fn forward<F: Real>(x: &Tensor<F>) -> Result<(Tensor<F>, MaxPoolCache)> {
        let [n, t, d] = match x.shape() {
            [a, b, c] => [*a, *b, *c],
            s => return Err(Error::shape(format!("maxpool_time expects [N, T, D], got {s:?}"))),
        };
        let mut out = Vec::with_capacity(n * d);
        let mut argmax = vec![0usize; n * d];
        for track in 0..n {
            let base = track * t * d;
            out.extend_from_slice(&x.data()[base..base + d]);
            let row = &mut out[track * d..(track + 1) * d];
            let am = &mut argmax[track * d..(track + 1) * d];
            for step in 1..t {
                let src = &x.data()[base + step * d..base + (step + 1) * d];
                for ch in 0..d {
                    if src[ch] > row[ch] {
                        row[ch] = src[ch];
                        am[ch] = step;
                    }
                }
            }
        }
        Ok((Tensor::from_vec(&[n, d], out)?, MaxPoolCache { argmax, frames: t }))
    }

    pub fn backward<F: Real>(cache: &MaxPoolCache, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, d) = gy.as_matrix();
        if cache.argmax.len() != n * d {
            return Err(Error::shape("maxpool_time backward: gradient does not match forward output"));
        }
        let t = cache.frames;
        let mut gx = vec![F::zero(); n * t * d];
        for track in 0..n {
            for ch in 0..d {
                let step = cache.argmax[track * d + ch];
                gx[(track * t + step) * d + ch] = gy.data()[track * d + ch];
            }
        }
        Tensor::from_vec(&[n, t, d], gx)
    }
}

// ---------------------------------------------------------------------------

/// Per-row standardization followed by a learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm<F> {
    pub gain: Parameter<F>,
    pub shift: Parameter<F>,
    pub eps: f64,
}

pub struct LayerNormCache<F> {
    normed: Tensor<F>,
    inv_std: Vec<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

impl<F: Real> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gain: Parameter::filled(&[dim], F::one()),
            shift: Parameter::zeros(&[dim]),
            eps: LAYER_NORM_EPS,
        }
    }

    /// Standardized rows before the affine stage.
    pub fn normalize(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Vec<F>)> {
        let (rows, d) = x.as_matrix();
        if d != self.gain.len() {
            return Err(Error::shape(format!("layer_norm over {}: input width {d}", self.gain.len())));
        }
        let inv_d = F::one() / F::of(d as f64);
        let eps = F::of(self.eps);
        let mut out = Vec::with_capacity(rows * d);
        let mut inv_std = Vec::with_capacity(rows);
        for row in x.data().chunks_exact(d) {
            let mean = row.iter().copied().sum::<F>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
            let is = F::one() / (var + eps).sqrt();
            out.extend(row.iter().map(|&v| (v - mean) * is));
            inv_std.push(is);
        }
        Ok((Tensor::from_vec(x.shape(), out)?, inv_std))
    }

    pub fn forward(&self, x: Tensor<F>) -> Result<(Tensor<F>, LayerNormCache<F>)> {
        let (normed, inv_std) = self.normalize(&x)?;
        let d = self.gain.len();
        let (g, b) = (self.gain.value.data(), self.shift.value.data());
        let mut out = normed.data().to_vec();
        for row in out.chunks_exact_mut(d) {
            for ((v, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        Ok((Tensor::from_vec(x.shape(), out)?, LayerNormCache { normed, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let d = self.gain.len();
        if gy.shape() != cache.normed.shape() {
            return Err(Error::shape("layer_norm backward: gradient shape mismatch"));
        }
        let inv_d = F::one() / F::of(d as f64);
        let g = self.gain.value.data().to_vec();
        let mut gx = Vec::with_capacity(gy.len());
        let mut dh = vec![F::zero(); d];
        for ((grow, hrow), &is) in gy
            .data()
            .chunks_exact(d)
            .zip(cache.normed.data().chunks_exact(d))
            .zip(&cache.inv_std)
        {
            {
                let gg = self.gain.grad.data_mut();
                for i in 0..d {
                    gg[i] += grow[i] * hrow[i];
                }
            }
            {
                let gs = self.shift.grad.data_mut();
                for i in 0..d {
                    gs[i] += grow[i];
                }
            }
            for i in 0..d {
                dh[i] = grow[i] * g[i];
            }
            let mean_dh = dh.iter().copied().sum::<F>() * inv_d;
            let mean_dh_h = dot(&dh, hrow) * inv_d;
            gx.extend((0..d).map(|i| is * (dh[i] - mean_dh - hrow[i] * mean_dh_h)));
        }
        Tensor::from_vec(gy.shape(), gx)
    }

    pub fn params(&self) -> [&Parameter<F>; 2] {
        [&self.gain, &self.shift]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<F>; 2] {
        [&mut self.gain, &mut self.shift]
    }
}

// ---------------------------------------------------------------------------

pub struct Relu;

pub struct ReluCache {
    active: Vec<bool>,
}

impl Relu {
    pub fn forward<F: Real>(mut x: Tensor<F>) -> (Tensor<F>, ReluCache) {
        let mut active = Vec::with_capacity(x.len());
        for v in x.data_mut() {
            let on = *v > F::zero();
            if !on {
                *v = F::zero();
            }
            active.push(on);
        }
        (x, ReluCache { active })
    }

    pub fn backward<F: Real>(cache: &ReluCache, gy: &Tensor<F>) -> Result<Tensor<F>> {
        if gy.len() != cache.active.len() {
            return Err(Error::shape("relu backward: gradient size mismatch"));
        }
        let data = gy
            .data()
            .iter()
            .zip(&cache.active)
            .map(|(&g, &on)| if on { g } else { F::zero() })
            .collect();
        Tensor::from_vec(gy.shape(), data)
    }
}

// ---------------------------------------------------------------------------

/// Mean over the token axis: `[n, d] → [d]`.
pub struct MeanPool;

impl MeanPool {
    pub fn forward<F: Real>(x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, d) = x.as_matrix();
        let mut out = vec![F::zero(); d];
        for row in x.data().chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = F::one() / F::of(n as f64);
        out.iter_mut().for_each(|v| *v *= inv);
        Tensor::from_vec(&[d], out)
    }

    pub fn backward<F: Real>(tokens: usize, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let d = gy.len();
        let inv = F::one() / F::of(tokens as f64);
        let row: Vec<F> = gy.data().iter().map(|&g| g * inv).collect();
        let mut out = Vec::with_capacity(tokens * d);
        for _ in 0..tokens {
            out.extend_from_slice(&row);
        }
        Tensor::from_vec(&[tokens, d], out)
    }
}

// ---------------------------------------------------------------------------

/// Inverted dropout; the identity outside training mode or when `p = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Dropout {
    pub p: f64,
}

pub struct DropoutCache<F> {
    mask: Option<Vec<F>>,
}

impl Dropout {
    pub fn forward<F: Real>(&self, mut x: Tensor<F>, mode: &mut Mode) -> (Tensor<F>, DropoutCache<F>) {
        match mode {
            Mode::Train(rng) if self.p > 0.0 => {
                let keep = F::of(1.0 / (1.0 - self.p));
                let mask: Vec<F> = (0..x.len())
                    .map(|_| if rng.random::<f64>() < self.p { F::zero() } else { keep })
                    .collect();
                for (v, &m) in x.data_mut().iter_mut().zip(&mask) {
                    *v *= m;
                }
                (x, DropoutCache { mask: Some(mask) })
            }
            _ => (x, DropoutCache { mask: None }),
        }
    }

    pub fn backward<F: Real>(cache: &DropoutCache<F>, gy: Tensor<F>) -> Tensor<F> {
        match &cache.mask {
            None => gy,
            Some(mask) => {
                let mut gy = gy;
                for (g, &m) in gy.data_mut().iter_mut().zip(mask) {
                    *g *= m;
                }
                gy
            }
        }
    }
}

// ---------------------------------------------------------------------------

/// Numerically stable in-place softmax of one row.
pub fn softmax_row<F: Real>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|v| *v *= inv);
}

/// Multi-head self-attention over `[n, d]` tokens with an output projection.
/// No positional information is injected, so it is permutation equivariant.
#[derive(Debug, Clone)]
pub struct Mhsa<F> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub out: Linear<F>,
    pub heads: usize,
    pub attn_dropout: Dropout,
}

pub struct MhsaCache<F> {
    q: (Tensor<F>, LinearCache<F>),
    k: (Tensor<F>, LinearCache<F>),
    v: (Tensor<F>, LinearCache<F>),
    /// Per head `[n, n]` attention before dropout.
    probs: Vec<Vec<F>>,
    drop: Vec<DropoutCache<F>>,
    /// Dropped attention used to mix values, per head.
    mixed: Vec<Vec<F>>,
    out: LinearCache<F>,
    tokens: usize,
}

impl<F: Real> Mhsa<F> {
    pub fn new(dim: usize, heads: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::invalid(format!(
                "model dimension {dim} is not divisible by head count {heads}"
            )));
        }
        Ok(Mhsa {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            out: Linear::new(dim, dim, rng),
            heads,
            attn_dropout: Dropout { p: dropout },
        })
    }

    pub fn dim(&self) -> usize {
        self.query.in_features()
    }

    fn head_slice(x: &[F], n: usize, d: usize, h: usize, dh: usize) -> Vec<F> {
        let mut out = Vec::with_capacity(n * dh);
        for i in 0..n {
            out.extend_from_slice(&x[i * d + h * dh..i * d + (h + 1) * dh]);
        }
        out
    }

    pub fn forward(&self, x: Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, MhsaCache<F>)> {
        let (n, d) = x.as_matrix();
        if d != self.dim() {
            return Err(Error::shape(format!("mhsa over {}: input width {d}", self.dim())));
        }
        let dh = d / self.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let q = self.query.forward(x.clone())?;
        let k = self.key.forward(x.clone())?;
        let v = self.value.forward(x)?;
        let mut concat = vec![F::zero(); n * d];
        let mut probs = Vec::with_capacity(self.heads);
        let mut drops = Vec::with_capacity(self.heads);
        let mut mixed = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = Self::head_slice(q.0.data(), n, d, h, dh);
            let kh = Self::head_slice(k.0.data(), n, d, h, dh);
            let vh = Self::head_slice(v.0.data(), n, d, h, dh);
            let mut s = vec![F::zero(); n * n];
            gemm_nt(&qh, &kh, &mut s, n, dh, n);
            for row in s.chunks_exact_mut(n) {
                row.iter_mut().for_each(|x| *x *= scale);
                softmax_row(row);
            }
            let (a, dc) = self.attn_dropout.forward(Tensor::from_vec(&[n, n], s.clone())?, mode);
            let a = a.into_data();
            let mut oh = vec![F::zero(); n * dh];
            gemm_nn(&a, &vh, &mut oh, n, n, dh);
            for i in 0..n {
                concat[i * d + h * dh..i * d + (h + 1) * dh].copy_from_slice(&oh[i * dh..(i + 1) * dh]);
            }
            probs.push(s);
            drops.push(dc);
            mixed.push(a);
        }
        let (y, out) = self.out.forward(Tensor::from_vec(&[n, d], concat)?)?;
        Ok((
            y,
            MhsaCache {
                q,
                k,
                v,
                probs,
                drop: drops,
                mixed,
                out,
                tokens: n,
            },
        ))
    }

    /// Attention weights of each head from a cached forward pass.
    pub fn attention(cache: &MhsaCache<F>) -> &[Vec<F>] {
        &cache.probs
    }

    pub fn backward(&mut self, cache: &MhsaCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let n = cache.tokens;
        let d = self.dim();
        let dh = d / self.heads;
        let scale = F::one() / F::of(dh as f64).sqrt();
        let g_concat = self.out.backward(&cache.out, gy)?;
        let mut gq = vec![F::zero(); n * d];
        let mut gk = vec![F::zero(); n * d];
        let mut gv = vec![F::zero(); n * d];
        for h in 0..self.heads {
            let qh = Self::head_slice(cache.q.0.data(), n, d, h, dh);
            let kh = Self::head_slice(cache.k.0.data(), n, d, h, dh);
            let vh = Self::head_slice(cache.v.0.data(), n, d, h, dh);
            let goh = Self::head_slice(g_concat.data(), n, d, h, dh);
            let a = &cache.mixed[h];
            let p = &cache.probs[h];
            // d(mixed) = gO · Vᵀ ; dV = mixedᵀ · gO
            let mut g_mixed = vec![F::zero(); n * n];
            gemm_nt(&goh, &vh, &mut g_mixed, n, dh, n);
            let mut gvh = vec![F::zero(); n * dh];
            gemm_tn(a, &goh, &mut gvh, n, n, dh);
            let g_probs = Dropout::backward(&cache.drop[h], Tensor::from_vec(&[n, n], g_mixed)?).into_data();
            // softmax backward, then the 1/√dh scale
            let mut gs = vec![F::zero(); n * n];
            for i in 0..n {
                let pr = &p[i * n..(i + 1) * n];
                let gr = &g_probs[i * n..(i + 1) * n];
                let inner = dot(pr, gr);
                for j in 0..n {
                    gs[i * n + j] = pr[j] * (gr[j] - inner) * scale;
                }
            }
            let mut gqh = vec![F::zero(); n * dh];
            gemm_nn(&gs, &kh, &mut gqh, n, n, dh);
            let mut gkh = vec![F::zero(); n * dh];
            gemm_tn(&gs, &qh, &mut gkh, n, n, dh);
            for i in 0..n {
                let dst = i * d + h * dh;
                gq[dst..dst + dh].copy_from_slice(&gqh[i * dh..(i + 1) * dh]);
                gk[dst..dst + dh].copy_from_slice(&gkh[i * dh..(i + 1) * dh]);
                gv[dst..dst + dh].copy_from_slice(&gvh[i * dh..(i + 1) * dh]);
            }
        }
        let mut gx = self.query.backward(&cache.q.1, &Tensor::from_vec(&[n, d], gq)?)?;
        let gxk = self.key.backward(&cache.k.1, &Tensor::from_vec(&[n, d], gk)?)?;
        let gxv = self.value.backward(&cache.v.1, &Tensor::from_vec(&[n, d], gv)?)?;
        for ((a, &b), &c) in gx.data_mut().iter_mut().zip(gxk.data()).zip(gxv.data()) {
            *a += b + c;
        }
        Ok(gx)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        [&self.query, &self.key, &self.value, &self.out]
            .into_iter()
            .flat_map(|l| l.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let Mhsa { query, key, value, out, .. } = self;
        [query, key, value, out]
            .into_iter()
            .flat_map(|l| l.params_mut())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::seed;

    fn rng() -> seed::Rng {
        seed::rng(11, "layers", 0)
    }

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_linear_passes_input_through() {
        let mut l = Linear::<f64>::new(3, 3, &mut rng());
        l.weight.value = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let x = t(&[2, 3], &[1., -2., 3., 0.5, 0., -1.]);
        assert_eq!(l.forward(x.clone()).unwrap().0, x);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut r = rng();
        let mut l = Linear::<f64>::new(4, 3, &mut r);
        l.bias.value = t(&[3], &[0.1, -0.2, 0.3]);
        let x: Vec<f64> = (0..8).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = l.forward(t(&[2, 4], &x)).unwrap().0;
        let w = l.weight.value.data();
        for i in 0..2 {
            for j in 0..3 {
                let mut acc = l.bias.value.data()[j];
                for k in 0..4 {
                    acc += x[i * 4 + k] * w[k * 3 + j];
                }
                assert!((y.data()[i * 3 + j] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let l = Linear::<f64>::new(4, 3, &mut rng());
        assert!(matches!(l.forward(t(&[2, 3], &[0.; 6])), Err(Error::Shape(_))));
    }

    #[test]
    fn centred_kernel_conv_is_identity() {
        let mut c = Conv1d::<f64>::new(3, 1, 1, &mut rng());
        c.weight.value = t(&[3, 1, 1], &[0., 1., 0.]);
        let x = t(&[1, 5, 1], &[1., 2., 3., 4., 5.]);
        assert_eq!(c.forward(x.clone()).unwrap().0, x);
    }

    #[test]
    fn conv_zero_pads_the_edges() {
        let mut c = Conv1d::<f64>::new(3, 1, 1, &mut rng());
        c.weight.value = t(&[3, 1, 1], &[1., 1., 1.]);
        let y = c.forward(t(&[1, 4, 1], &[1., 2., 3., 4.])).unwrap().0;
        assert_eq!(y.data(), &[3., 6., 9., 7.]);
    }

    #[test]
    fn maxpool_takes_time_max_and_routes_gradient() {
        let x = t(&[1, 3, 2], &[1., 5., 4., 2., 3., 6.]);
        let (y, c) = MaxPoolTime::forward(&x).unwrap();
        assert_eq!(y.data(), &[4., 6.]);
        let g = MaxPoolTime::backward(&c, &t(&[1, 2], &[1., 2.])).unwrap();
        assert_eq!(g.data(), &[0., 0., 1., 0., 0., 2.]);
    }

    #[test]
    fn layer_norm_of_constant_row_is_zero() {
        let ln = LayerNorm::<f64>::new(4);
        let (h, _) = ln.normalize(&t(&[1, 4], &[3.; 4])).unwrap();
        assert!(h.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn relu_blocks_negative_gradient() {
        let (y, c) = Relu::forward(t(&[4], &[-1., 2., -0.5, 0.]));
        assert_eq!(y.data(), &[0., 2., 0., 0.]);
        let g = Relu::backward(&c, &t(&[4], &[1.; 4])).unwrap();
        assert_eq!(g.data(), &[0., 1., 0., 0.]);
    }

    #[test]
    fn mean_pool_spreads_gradient_evenly() {
        let x = t(&[4, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        assert_eq!(MeanPool::forward(&x).unwrap().data(), &[4., 5.]);
        let g = MeanPool::backward::<f64>(4, &t(&[2], &[1., -2.])).unwrap();
        assert_eq!(g.data(), &[0.25, -0.5, 0.25, -0.5, 0.25, -0.5, 0.25, -0.5]);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let d = Dropout { p: 0.5 };
        let x = t(&[3], &[1., 2., 3.]);
        assert_eq!(d.forward(x.clone(), &mut Mode::Eval).0, x);
    }

    #[test]
    fn dropout_keeps_expectation() {
        let d = Dropout { p: 0.25 };
        let mut r = rng();
        let (y, _) = d.forward(t(&[20000], &[1.; 20000]), &mut Mode::Train(&mut r));
        let mean = y.data().iter().sum::<f64>() / 20000.0;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 4.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn equal_scores_give_uniform_attention() {
        let mut m = Mhsa::<f64>::new(4, 2, 0.0, &mut rng()).unwrap();
        m.query.weight.value.fill(0.0);
        let x = t(&[3, 4], &[0.1, 0.2, 0.3, 0.4, -1., 0., 1., 2., 0.5, 0.5, 0.5, 0.5]);
        let (_, cache) = m.forward(x, &mut Mode::Eval).unwrap();
        for head in Mhsa::attention(&cache) {
            assert!(head.iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_token_attention_returns_projected_value() {
        let m = Mhsa::<f64>::new(4, 2, 0.0, &mut rng()).unwrap();
        let x = t(&[1, 4], &[0.3, -0.7, 1.1, 0.2]);
        let (y, _) = m.forward(x.clone(), &mut Mode::Eval).unwrap();
        let v = m.value.forward(x).unwrap().0;
        let expect = m.out.forward(v).unwrap().0;
        for (a, b) in y.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mhsa_rejects_indivisible_heads() {
        assert!(Mhsa::<f64>::new(6, 4, 0.0, &mut rng()).is_err());
    }

    #[test]
    fn mhsa_is_permutation_equivariant() {
        let m = Mhsa::<f64>::new(4, 2, 0.0, &mut rng()).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.71).cos()).collect();
        let perm = [2usize, 0, 1];
        let px: Vec<f64> = perm.iter().flat_map(|&i| x[i * 4..i * 4 + 4].to_vec()).collect();
        let y = m.forward(t(&[3, 4], &x), &mut Mode::Eval).unwrap().0;
        let py = m.forward(t(&[3, 4], &px), &mut Mode::Eval).unwrap().0;
        for (row, &src) in perm.iter().enumerate() {
            for c in 0..4 {
                assert!((py.data()[row * 4 + c] - y.data()[src * 4 + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_accumulates_parameter_gradients() {
        let mut l = Linear::<f64>::new(2, 2, &mut rng());
        let (_, c) = l.forward(t(&[1, 2], &[1., 2.])).unwrap();
        let g = t(&[1, 2], &[1., 1.]);
        l.backward(&c, &g).unwrap();
        let once = l.weight.grad.clone();
        l.backward(&c, &g).unwrap();
        for (a, b) in l.weight.grad.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(v in prop::collection::vec(-50.0f64..50.0, 1..16)) {
            let mut row = v.clone();
            softmax_row(&mut row);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn layer_norm_standardizes(v in prop::collection::vec(-10.0f64..10.0, 8)) {
            let m0 = v.iter().sum::<f64>() / 8.0;
            prop_assume!(v.iter().map(|x| (x - m0) * (x - m0)).sum::<f64>() / 8.0 > 1.0);
            let ln = LayerNorm::<f64>::new(8);
            let (h, _) = ln.normalize(&t(&[1, 8], &v)).unwrap();
            let mean = h.data().iter().sum::<f64>() / 8.0;
            let var = h.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
            prop_assert!(mean.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-5);
        }
    }
}
