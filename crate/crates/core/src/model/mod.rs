//! The track transformer (MovT), its pixel-input twin (PixT), and the
//! parameter/FLOP ledger both are accounted with.

mod accounting;
mod blocks;
pub mod checkpoint;
mod movt;
mod pixt;

use serde::{Deserialize, Serialize};

pub use accounting::{count_flops, count_params, ledger, LedgerRow};
pub use blocks::{Backbone, BackboneTrace, Mlp, SequenceEncoder};
pub use movt::{MovTInput, MovTInputGrad, MovTModel, MovTTrace};
pub use pixt::{PixTModel, PixTTrace};

use crate::error::{Error, Result};
use crate::nn::{Mode, Parameter, Real, Tensor};
use crate::trackio::PointTrackSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Classification { classes: usize },
    Regression { dim: usize },
}

impl HeadKind {
    pub fn outputs(&self) -> usize {
        match *self {
            HeadKind::Classification { classes } => classes,
            HeadKind::Regression { dim } => dim,
        }
    }

    pub fn classes(&self) -> Option<usize> {
        match *self {
            HeadKind::Classification { classes } => Some(classes),
            HeadKind::Regression { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            HeadKind::Classification { classes } if classes < 2 => {
                Err(Error::Config(format!("classification head needs at least 2 classes, got {classes}")))
            }
            HeadKind::Regression { dim } if dim < 1 => Err(Error::Config("regression head needs dim ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

/// Nonlinearity inside every MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

/// Where layer norm sits in each encoder block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormLayout {
    Pre,
}

/// How motion and position embeddings form a track token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenFusion {
    Concat,
}

/// Weight initialization: `U(±√(1/fan_in))` for linear and conv weights,
/// zero biases, unit norm gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    FanInUniform,
}

/// Hyperparameters shared by the transformer stack of both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub dropout: f64,
    pub norm_layout: NormLayout,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        TransformerConfig {
            layers: 4,
            heads: 4,
            ff_mult: 4,
            dropout: 0.1,
            norm_layout: NormLayout::Pre,
        }
    }
}

impl TransformerConfig {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("transformer needs at least one layer".into()));
        }
        if self.heads < 1 || dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "transformer dimension {dim} is not divisible by {} heads",
                self.heads
            )));
        }
        if self.ff_mult < 1 {
            return Err(Error::Config("ff_mult must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Per-step MLP → temporal conv → time max-pool stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Linear layers in the per-step MLP.
    pub mlp_layers: usize,
    pub mlp_hidden: usize,
    pub conv_kernel: usize,
    pub activation: Activation,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            mlp_layers: 2,
            mlp_hidden: 128,
            conv_kernel: 3,
            activation: Activation::Relu,
        }
    }
}

impl EncoderConfig {
    fn validate(&self) -> Result<()> {
        if self.mlp_layers < 1 || self.mlp_hidden < 1 || self.conv_kernel < 1 {
            return Err(Error::Config("encoder MLP depth, width and conv kernel must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MovTConfig {
    /// Width `D` of each of the motion and position embeddings; tokens are `2D` wide.
    pub embed_dim: usize,
    pub motion: EncoderConfig,
    /// Linear layers / hidden width of the mean-position MLP.
    pub position_mlp_layers: usize,
    pub position_mlp_hidden: usize,
    pub transformer: TransformerConfig,
    pub head: HeadKind,
    /// Multiplier on `(vx, vy)` before the motion encoder; 100 expresses
    /// displacement in percent of the frame per step.
    pub velocity_scale: f64,
    pub token_fusion: TokenFusion,
    pub init: Init,
    /// Nominal input extents, used for FLOP reports.
    pub frames: usize,
    pub tracks: usize,
}

impl Default for MovTConfig {
    fn default() -> Self {
        MovTConfig {
            embed_dim: 128,
            motion: EncoderConfig::default(),
            position_mlp_layers: 2,
            position_mlp_hidden: 128,
            transformer: TransformerConfig::default(),
            head: HeadKind::Classification { classes: 8 },
            velocity_scale: 100.0,
            token_fusion: TokenFusion::Concat,
            init: Init::FanInUniform,
            frames: 32,
            tracks: 60,
        }
    }
}

impl MovTConfig {
    pub fn model_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 {
            return Err(Error::Config("embed_dim must be ≥ 1".into()));
        }
        if self.position_mlp_layers < 1 || self.position_mlp_hidden < 1 {
            return Err(Error::Config("position MLP depth and width must be ≥ 1".into()));
        }
        if !(self.velocity_scale.is_finite() && self.velocity_scale > 0.0) {
            return Err(Error::Config("velocity_scale must be positive".into()));
        }
        if self.frames < 2 || self.tracks < 1 {
            return Err(Error::Config("nominal frames must be ≥ 2 and tracks ≥ 1".into()));
        }
        self.motion.validate()?;
        self.transformer.validate(self.model_dim())?;
        self.head.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PixTConfig {
    pub embed_dim: usize,
    pub pixel: EncoderConfig,
    pub transformer: TransformerConfig,
    pub head: HeadKind,
    pub patch: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    /// Gaussian blob radius used when frames are rendered from tracks.
    pub blob_sigma_px: f64,
    pub init: Init,
}

impl Default for PixTConfig {
    fn default() -> Self {
        PixTConfig {
            embed_dim: 128,
            pixel: EncoderConfig::default(),
            transformer: TransformerConfig::default(),
            head: HeadKind::Classification { classes: 8 },
            patch: 8,
            height: 32,
            width: 32,
            frames: 32,
            blob_sigma_px: 1.0,
            init: Init::FanInUniform,
        }
    }
}

impl PixTConfig {
    pub fn model_dim(&self) -> usize {
        2 * self.embed_dim
    }

    pub fn patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_features(&self) -> usize {
        self.patch * self.patch * 3
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 1 || self.patch < 1 {
            return Err(Error::Config("embed_dim and patch must be ≥ 1".into()));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "{}×{} frames are not divisible into {}-pixel patches",
                self.height, self.width, self.patch
            )));
        }
        if self.frames < 2 {
            return Err(Error::Config("nominal frames must be ≥ 2".into()));
        }
        if !(self.blob_sigma_px.is_finite() && self.blob_sigma_px > 0.0) {
            return Err(Error::Config("blob_sigma_px must be positive".into()));
        }
        self.pixel.validate()?;
        self.transformer.validate(self.model_dim())?;
        self.head.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelConfig {
    Movt(MovTConfig),
    Pixt(PixTConfig),
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::Movt(c) => c.validate(),
            ModelConfig::Pixt(c) => c.validate(),
        }
    }

    pub fn head(&self) -> HeadKind {
        match self {
            ModelConfig::Movt(c) => c.head,
            ModelConfig::Pixt(c) => c.head,
        }
    }

    pub fn model_dim(&self) -> usize {
        match self {
            ModelConfig::Movt(c) => c.model_dim(),
            ModelConfig::Pixt(c) => c.model_dim(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Movt(_) => "movt",
            ModelConfig::Pixt(_) => "pixt",
        }
    }

    pub fn dropout(&self) -> f64 {
        match self {
            ModelConfig::Movt(c) => c.transformer.dropout,
            ModelConfig::Pixt(c) => c.transformer.dropout,
        }
    }
}

/// Head output and pooled video embedding `E_F` of one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<F> {
    pub output: Tensor<F>,
    pub embedding: Tensor<F>,
}

/// Network-ready input of one clip.
#[derive(Debug, Clone)]
pub enum Prepared<F> {
    Movt(MovTInput),
    /// `[patches, T, patch·patch·3]`
    Pixt(Tensor<F>),
}

pub enum Trace<F> {
    Movt(MovTTrace<F>),
    Pixt(PixTTrace<F>),
}

/// Either network behind one interface.
#[derive(Debug, Clone)]
pub enum Model<F> {
    Movt(MovTModel<F>),
    Pixt(PixTModel<F>),
}

impl<F: Real> Model<F> {
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(match config {
            ModelConfig::Movt(c) => Model::Movt(MovTModel::new(c.clone(), seed)?),
            ModelConfig::Pixt(c) => Model::Pixt(PixTModel::new(c.clone(), seed)?),
        })
    }

    pub fn config(&self) -> ModelConfig {
        match self {
            Model::Movt(m) => ModelConfig::Movt(m.config.clone()),
            Model::Pixt(m) => ModelConfig::Pixt(m.config.clone()),
        }
    }

    pub fn head(&self) -> HeadKind {
        self.config().head()
    }

    /// Converts a clip into the network's input tensors. PixT renders the
    /// clip's frames from its tracks.
    pub fn prepare(&self, set: &PointTrackSet) -> Result<Prepared<F>> {
        Ok(match self {
            Model::Movt(_) => Prepared::Movt(MovTInput::from_set(set)),
            Model::Pixt(m) => Prepared::Pixt(m.patch_features(&m.render(set)?)?),
        })
    }

    pub fn forward_prepared(&self, input: &Prepared<F>, mode: &mut Mode) -> Result<(Forward<F>, Trace<F>)> {
        match (self, input) {
            (Model::Movt(m), Prepared::Movt(x)) => {
                let (f, t) = m.forward(x, mode)?;
                Ok((f, Trace::Movt(t)))
            }
            (Model::Pixt(m), Prepared::Pixt(x)) => {
                let (f, t) = m.forward_patches(x.clone(), mode)?;
                Ok((f, Trace::Pixt(t)))
            }
            _ => Err(Error::invalid("input was prepared for a different model kind")),
        }
    }

    /// Runs one clip.
    pub fn forward_set(&self, set: &PointTrackSet, mode: &mut Mode) -> Result<(Forward<F>, Trace<F>)> {
        self.forward_prepared(&self.prepare(set)?, mode)
    }

    /// Eval-mode output and embedding without keeping a trace.
    pub fn infer(&self, set: &PointTrackSet) -> Result<Forward<F>> {
        Ok(self.forward_set(set, &mut Mode::Eval)?.0)
    }

    /// Backpropagates `grad_output` (gradient of the loss w.r.t. the head
    /// output), accumulating parameter gradients.
    pub fn backward(&mut self, trace: &Trace<F>, grad_output: &Tensor<F>) -> Result<()> {
        match (self, trace) {
            (Model::Movt(m), Trace::Movt(t)) => m.backward(t, grad_output).map(|_| ()),
            (Model::Pixt(m), Trace::Pixt(t)) => m.backward(t, grad_output).map(|_| ()),
            _ => Err(Error::MissingContext("trace was produced by a different model kind".into())),
        }
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        match self {
            Model::Movt(m) => m.params(),
            Model::Pixt(m) => m.params(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        match self {
            Model::Movt(m) => m.params_mut(),
            Model::Pixt(m) => m.params_mut(),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.params().iter().map(|p| p.len() as u64).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.zero_grad());
    }

    pub fn cast<G: Real>(&self) -> Model<G> {
        match self {
            Model::Movt(m) => Model::Movt(m.cast()),
            Model::Pixt(m) => Model::Pixt(m.cast()),
        }
    }

    /// SHA-256 over all parameter values in declaration order.
    pub fn weights_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for p in self.params() {
            for v in p.value.data() {
                h.update(v.as_f64().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}
