use super::{EncoderConfig, HeadKind, TransformerConfig};
use crate::error::Result;
use crate::nn::layers::{Conv1dCache, LayerNormCache, LinearCache, MaxPoolCache, ReluCache};
use crate::nn::{encoder::EncoderCache, Conv1d, EncoderLayer, LayerNorm, Linear, MaxPoolTime, MeanPool, Mode, Parameter, Real, Relu, Tensor};
use crate::seed::Rng;

/// Stack of linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp<F> {
    pub layers: Vec<Linear<F>>,
}

pub struct MlpTrace<F> {
    linear: Vec<LinearCache<F>>,
    relu: Vec<ReluCache>,
}

impl<F: Real> Mlp<F> {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, depth: usize, rng: &mut Rng) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let fin = if i == 0 { inputs } else { hidden };
                let fout = if i + 1 == depth { outputs } else { hidden };
                Linear::new(fin, fout, rng)
            })
            .collect();
        Mlp { layers }
    }

    pub fn forward(&self, x: Tensor<F>) -> Result<(Tensor<F>, MlpTrace<F>)> {
        let mut trace = MlpTrace {
            linear: Vec::with_capacity(self.layers.len()),
            relu: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, c) = layer.forward(h)?;
            trace.linear.push(c);
            h = y;
            if i + 1 < self.layers.len() {
                let (y, c) = Relu::forward(h);
                trace.relu.push(c);
                h = y;
            }
        }
        Ok((h, trace))
    }

    pub fn backward(&mut self, trace: &MlpTrace<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let mut g = gy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = Relu::backward(&trace.relu[i], &g)?;
            }
            g = self.layers[i].backward(&trace.linear[i], &g)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Per-step MLP, temporal convolution and max over time:
/// `[S, T, in] → [S, out]`, one row per sequence (track or patch).
#[derive(Debug, Clone)]
pub struct SequenceEncoder<F> {
    pub mlp: Mlp<F>,
    pub conv: Conv1d<F>,
}

pub struct SequenceTrace<F> {
    mlp: MlpTrace<F>,
    conv: Conv1dCache<F>,
    pool: MaxPoolCache,
}

impl<F: Real> SequenceEncoder<F> {
    pub fn new(inputs: usize, outputs: usize, cfg: &EncoderConfig, rng: &mut Rng) -> Self {
        SequenceEncoder {
            mlp: Mlp::new(inputs, cfg.mlp_hidden, outputs, cfg.mlp_layers, rng),
            conv: Conv1d::new(cfg.conv_kernel, outputs, outputs, rng),
        }
    }

    pub fn forward(&self, x: Tensor<F>) -> Result<(Tensor<F>, SequenceTrace<F>)> {
        let (h, mlp) = self.mlp.forward(x)?;
        let (h, conv) = self.conv.forward(h)?;
        let (y, pool) = MaxPoolTime::forward(&h)?;
        Ok((y, SequenceTrace { mlp, conv, pool }))
    }

    pub fn backward(&mut self, trace: &SequenceTrace<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let g = MaxPoolTime::backward(&trace.pool, gy)?;
        let g = self.conv.backward(&trace.conv, &g)?;
        self.mlp.backward(&trace.mlp, &g)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.mlp.params();
        p.extend(self.conv.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut p = self.mlp.params_mut();
        p.extend(self.conv.params_mut());
        p
    }
}

/// Transformer stack over tokens, final norm, mean over tokens (`E_F`) and
/// the output head.
#[derive(Debug, Clone)]
pub struct Backbone<F> {
    pub layers: Vec<EncoderLayer<F>>,
    pub norm: LayerNorm<F>,
    pub head: Linear<F>,
}

pub struct BackboneTrace<F> {
    layers: Vec<EncoderCache<F>>,
    norm: LayerNormCache<F>,
    head: LinearCache<F>,
    tokens: usize,
}

impl<F> BackboneTrace<F> {
    pub fn tokens(&self) -> usize {
        self.tokens
    }
}

impl<F: Real> Backbone<F> {
    pub fn new(dim: usize, cfg: &TransformerConfig, head: HeadKind, rng: &mut Rng) -> Result<Self> {
        let layers = (0..cfg.layers)
            .map(|_| EncoderLayer::new(dim, cfg.heads, cfg.ff_mult, cfg.dropout, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Backbone {
            layers,
            norm: LayerNorm::new(dim),
            head: Linear::new(dim, head.outputs(), rng),
        })
    }

    /// Returns `(head output, E_F)`.
    pub fn forward(&self, tokens: Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, Tensor<F>, BackboneTrace<F>)> {
        let n = tokens.as_matrix().0;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = tokens;
        for layer in &self.layers {
            let (y, c) = layer.forward(h, mode)?;
            caches.push(c);
            h = y;
        }
        let (h, norm) = self.norm.forward(h)?;
        let emb = MeanPool::forward(&h)?;
        let (out, head) = self.head.forward(emb.clone().reshape(&[1, emb.len()])?)?;
        let out = out.reshape(&[self.head.out_features()])?;
        out.check_finite("model output")?;
        Ok((
            out,
            emb,
            BackboneTrace {
                layers: caches,
                norm,
                head,
                tokens: n,
            },
        ))
    }

    /// Gradient with respect to the input tokens.
    pub fn backward(&mut self, trace: &BackboneTrace<F>, g_out: &Tensor<F>) -> Result<Tensor<F>> {
        let g = self.head.backward(&trace.head, &g_out.clone().reshape(&[1, g_out.len()])?)?;
        let g = MeanPool::backward(trace.tokens, &g.reshape(&[self.norm.gain.len()])?)?;
        let mut g = self.norm.backward(&trace.norm, &g)?;
        for (layer, cache) in self.layers.iter_mut().zip(&trace.layers).rev() {
            g = layer.backward(cache, &g)?;
        }
        Ok(g)
    }

    /// Per-layer, per-head attention matrices from a trace.
    pub fn attention<'a>(trace: &'a BackboneTrace<F>) -> Vec<&'a [Vec<F>]> {
        trace.layers.iter().map(EncoderLayer::attention).collect()
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p: Vec<&Parameter<F>> = self.layers.iter().flat_map(|l| l.params()).collect();
        p.extend(self.norm.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let Backbone { layers, norm, head } = self;
        let mut p: Vec<&mut Parameter<F>> = layers.iter_mut().flat_map(|l| l.params_mut()).collect();
        p.extend(norm.params_mut());
        p.extend(head.params_mut());
        p
    }
}

pub(crate) fn cast_param<F: Real, G: Real>(p: &Parameter<F>) -> Parameter<G> {
    p.cast()
}

/// Copies `src` values into `dst` in order, for precision casts.
pub(crate) fn copy_params<F: Real, G: Real>(src: Vec<&Parameter<F>>, dst: Vec<&mut Parameter<G>>) {
    for (s, d) in src.into_iter().zip(dst) {
        *d = cast_param(s);
    }
}
