//! Declarative layer descriptions. A `LayerSpec` fixes a layer's kind and
//! dimensions; it drives parameter/FLOP accounting and can be instantiated
//! into a runnable [`AnyLayer`].

use serde::{Deserialize, Serialize};

use super::layers::{
    Conv1d, Conv1dCache, LayerNorm, LayerNormCache, Linear, LinearCache, MaxPoolCache, MaxPoolTime, MeanPool,
    Mhsa, MhsaCache, Mode, Relu, ReluCache,
};
use super::{Parameter, Real, Tensor};
use crate::error::{Error, Result};
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    Conv1d { kernel: usize, inputs: usize, outputs: usize },
    MaxpoolTime,
    LayerNorm { dim: usize },
    Mhsa { dim: usize, heads: usize },
    Relu,
    MeanPool,
}

/// How many independent sequences a layer sees and how long each one is.
/// A per-row layer applied to `rows` vectors uses `Extent::rows(rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extent {
    pub sequences: usize,
    pub length: usize,
}

impl Extent {
    pub fn rows(rows: usize) -> Self {
        Extent {
            sequences: 1,
            length: rows,
        }
    }

    pub fn total(&self) -> u64 {
        (self.sequences * self.length) as u64
    }
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxpoolTime => "maxpool_time",
            LayerSpec::LayerNorm { .. } => "layer_norm",
            LayerSpec::Mhsa { .. } => "mhsa",
            LayerSpec::Relu => "relu",
            LayerSpec::MeanPool => "mean_pool",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Linear { inputs, outputs } => inputs > 0 && outputs > 0,
            LayerSpec::Conv1d { kernel, inputs, outputs } => kernel > 0 && inputs > 0 && outputs > 0,
            LayerSpec::LayerNorm { dim } => dim > 0,
            LayerSpec::Mhsa { dim, heads } => {
                if heads == 0 || dim == 0 || dim % heads != 0 {
                    return Err(Error::invalid(format!(
                        "mhsa dimension {dim} must be a positive multiple of head count {heads}"
                    )));
                }
                true
            }
            LayerSpec::MaxpoolTime | LayerSpec::Relu | LayerSpec::MeanPool => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("{self:?}: dimensions must be positive")))
        }
    }

    /// Learned scalars.
    pub fn param_count(&self) -> u64 {
        match *self {
            LayerSpec::Linear { inputs, outputs } => (inputs * outputs + outputs) as u64,
            LayerSpec::Conv1d { kernel, inputs, outputs } => (kernel * inputs * outputs + outputs) as u64,
            LayerSpec::LayerNorm { dim } => 2 * dim as u64,
            LayerSpec::Mhsa { dim, .. } => 4 * (dim * dim + dim) as u64,
            LayerSpec::MaxpoolTime | LayerSpec::Relu | LayerSpec::MeanPool => 0,
        }
    }

    /// Floating-point operations for one inference, a multiply-add counted
    /// as two. Bias additions count one per output; normalization,
    /// activations, pooling and softmax are not counted.
    pub fn flops(&self, extent: Extent) -> u64 {
        let rows = extent.total();
        match *self {
            LayerSpec::Linear { inputs, outputs } => {
                2 * rows * (inputs * outputs) as u64 + rows * outputs as u64
            }
            LayerSpec::Conv1d { kernel, inputs, outputs } => {
                2 * rows * (kernel * inputs * outputs) as u64 + rows * outputs as u64
            }
            LayerSpec::Mhsa { dim, .. } => {
                let d = dim as u64;
                let n = extent.length as u64;
                let per_seq = 4 * (2 * n * d * d + n * d) + 2 * (2 * n * n * d);
                extent.sequences as u64 * per_seq
            }
            LayerSpec::MaxpoolTime | LayerSpec::LayerNorm { .. } | LayerSpec::Relu | LayerSpec::MeanPool => 0,
        }
    }

    pub fn build<F: Real>(&self, rng: &mut Rng) -> Result<AnyLayer<F>> {
        self.validate()?;
        Ok(match *self {
            LayerSpec::Linear { inputs, outputs } => AnyLayer::Linear(Linear::new(inputs, outputs, rng)),
            LayerSpec::Conv1d { kernel, inputs, outputs } => {
                AnyLayer::Conv1d(Conv1d::new(kernel, inputs, outputs, rng))
            }
            LayerSpec::MaxpoolTime => AnyLayer::MaxpoolTime,
            LayerSpec::LayerNorm { dim } => AnyLayer::LayerNorm(LayerNorm::new(dim)),
            LayerSpec::Mhsa { dim, heads } => AnyLayer::Mhsa(Mhsa::new(dim, heads, 0.0, rng)?),
            LayerSpec::Relu => AnyLayer::Relu,
            LayerSpec::MeanPool => AnyLayer::MeanPool,
        })
    }
}

/// A runnable layer of any kind.
#[derive(Debug, Clone)]
pub enum AnyLayer<F> {
    Linear(Linear<F>),
    Conv1d(Conv1d<F>),
    MaxpoolTime,
    LayerNorm(LayerNorm<F>),
    Mhsa(Mhsa<F>),
    Relu,
    MeanPool,
}

pub enum LayerCache<F> {
    Linear(LinearCache<F>),
    Conv1d(Conv1dCache<F>),
    MaxpoolTime(MaxPoolCache),
    LayerNorm(LayerNormCache<F>),
    Mhsa(MhsaCache<F>),
    Relu(ReluCache),
    MeanPool { tokens: usize },
}

impl<F: Real> AnyLayer<F> {
    pub fn forward(&self, x: Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, LayerCache<F>)> {
        let (y, cache) = match self {
            AnyLayer::Linear(l) => l.forward(x).map(|(y, c)| (y, LayerCache::Linear(c)))?,
            AnyLayer::Conv1d(l) => l.forward(x).map(|(y, c)| (y, LayerCache::Conv1d(c)))?,
            AnyLayer::MaxpoolTime => MaxPoolTime::forward(&x).map(|(y, c)| (y, LayerCache::MaxpoolTime(c)))?,
            AnyLayer::LayerNorm(l) => l.forward(x).map(|(y, c)| (y, LayerCache::LayerNorm(c)))?,
            AnyLayer::Mhsa(l) => l.forward(x, mode).map(|(y, c)| (y, LayerCache::Mhsa(c)))?,
            AnyLayer::Relu => {
                let (y, c) = Relu::forward(x);
                (y, LayerCache::Relu(c))
            }
            AnyLayer::MeanPool => {
                let tokens = x.as_matrix().0;
                (MeanPool::forward(&x)?, LayerCache::MeanPool { tokens })
            }
        };
        y.check_finite("layer output")?;
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &LayerCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        match (self, cache) {
            (AnyLayer::Linear(l), LayerCache::Linear(c)) => l.backward(c, gy),
            (AnyLayer::Conv1d(l), LayerCache::Conv1d(c)) => l.backward(c, gy),
            (AnyLayer::MaxpoolTime, LayerCache::MaxpoolTime(c)) => MaxPoolTime::backward(c, gy),
            (AnyLayer::LayerNorm(l), LayerCache::LayerNorm(c)) => l.backward(c, gy),
            (AnyLayer::Mhsa(l), LayerCache::Mhsa(c)) => l.backward(c, gy),
            (AnyLayer::Relu, LayerCache::Relu(c)) => Relu::backward(c, gy),
            (AnyLayer::MeanPool, LayerCache::MeanPool { tokens }) => MeanPool::backward(*tokens, gy),
            (layer, _) => Err(Error::MissingContext(format!(
                "cache does not belong to a {} layer",
                layer.kind()
            ))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyLayer::Linear(_) => "linear",
            AnyLayer::Conv1d(_) => "conv1d",
            AnyLayer::MaxpoolTime => "maxpool_time",
            AnyLayer::LayerNorm(_) => "layer_norm",
            AnyLayer::Mhsa(_) => "mhsa",
            AnyLayer::Relu => "relu",
            AnyLayer::MeanPool => "mean_pool",
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            AnyLayer::Linear(l) => l.params_mut().into(),
            AnyLayer::Conv1d(l) => l.params_mut().into(),
            AnyLayer::LayerNorm(l) => l.params_mut().into(),
            AnyLayer::Mhsa(l) => l.params_mut(),
            AnyLayer::MaxpoolTime | AnyLayer::Relu | AnyLayer::MeanPool => Vec::new(),
        }
    }
}
