use super::blocks::{copy_params, Backbone, BackboneTrace, SequenceEncoder, SequenceTrace};
use super::{Forward, PixTConfig};
use crate::error::{Error, Result};
use crate::nn::layers::LinearCache;
use crate::nn::{Linear, Mode, Parameter, Real, Tensor};
use crate::seed;
use crate::synthgen::{render_frames, Frames};
use crate::trackio::PointTrackSet;

/// Pixel transformer: each spatial patch is a token whose per-frame RGB
/// vector goes through the same per-step MLP, temporal conv and time max as
/// the motion branch, is projected to the token width, and receives a learned
/// positional embedding indexed by patch position.
#[derive(Debug, Clone)]
pub struct PixTModel<F> {
    pub config: PixTConfig,
    pub pixel: SequenceEncoder<F>,
    pub proj: Linear<F>,
    /// `[patches, 2D]`
    pub pos_embed: Parameter<F>,
    pub backbone: Backbone<F>,
}

pub struct PixTTrace<F> {
    pixel: SequenceTrace<F>,
    proj: LinearCache<F>,
    backbone: BackboneTrace<F>,
}

impl<F: Real> PixTModel<F> {
    pub fn new(config: PixTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "init", 0);
        let (d, dim) = (config.embed_dim, config.model_dim());
        let pixel = SequenceEncoder::new(config.patch_features(), d, &config.pixel, &mut rng);
        let proj = Linear::new(d, dim, &mut rng);
        let pos_embed = Parameter::fan_in_uniform(&[config.patches(), dim], dim, &mut rng);
        let backbone = Backbone::new(dim, &config.transformer, config.head, &mut rng)?;
        Ok(PixTModel {
            config,
            pixel,
            proj,
            pos_embed,
            backbone,
        })
    }

    pub fn render(&self, set: &PointTrackSet) -> Result<Frames> {
        render_frames(set, self.config.height, self.config.width, self.config.blob_sigma_px)
    }

    /// Rearranges `T×H×W×3` frames into `[patches, T, patch·patch·3]`, patches
    /// row-major over the grid, pixels row-major inside a patch.
    pub fn patch_features(&self, frames: &Frames) -> Result<Tensor<F>> {
        let p = self.config.patch;
        if frames.height != self.config.height || frames.width != self.config.width {
            return Err(Error::shape(format!(
                "frames are {}×{}, model expects {}×{}",
                frames.height, frames.width, self.config.height, self.config.width
            )));
        }
        let (gh, gw) = (frames.height / p, frames.width / p);
        let feat = self.config.patch_features();
        let t_len = frames.frames;
        let mut out = vec![F::zero(); gh * gw * t_len * feat];
        for t in 0..t_len {
            for py in 0..gh {
                for px in 0..gw {
                    let token = py * gw + px;
                    let base = (token * t_len + t) * feat;
                    let mut k = 0;
                    for y in 0..p {
                        for x in 0..p {
                            let src = frames.pixel(t, py * p + y, px * p + x);
                            for c in src {
                                out[base + k] = F::of_f32(c);
                                k += 1;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[gh * gw, t_len, feat], out)
    }

    pub fn forward(&self, frames: &Frames, mode: &mut Mode) -> Result<(Forward<F>, PixTTrace<F>)> {
        self.forward_patches(self.patch_features(frames)?, mode)
    }

    /// Runs on pre-arranged patch features `[patches, T, feat]`.
    pub fn forward_patches(&self, patches: Tensor<F>, mode: &mut Mode) -> Result<(Forward<F>, PixTTrace<F>)> {
        let tokens = patches.shape()[0];
        if tokens != self.config.patches() {
            return Err(Error::shape(format!(
                "{tokens} patch tokens, positional table has {}",
                self.config.patches()
            )));
        }
        let (e, pixel) = self.pixel.forward(patches)?;
        let (mut h, proj) = self.proj.forward(e)?;
        for (v, &p) in h.data_mut().iter_mut().zip(self.pos_embed.value.data()) {
            *v += p;
        }
        let (output, embedding, backbone) = self.backbone.forward(h, mode)?;
        Ok((Forward { output, embedding }, PixTTrace { pixel, proj, backbone }))
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the patch features.
    pub fn backward(&mut self, trace: &PixTTrace<F>, g_out: &Tensor<F>) -> Result<Tensor<F>> {
        let g = self.backbone.backward(&trace.backbone, g_out)?;
        for (gp, &v) in self.pos_embed.grad.data_mut().iter_mut().zip(g.data()) {
            *gp += v;
        }
        let g = self.proj.backward(&trace.proj, &g)?;
        self.pixel.backward(&trace.pixel, &g)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.pixel.params();
        p.extend(self.proj.params());
        p.push(&self.pos_embed);
        p.extend(self.backbone.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let PixTModel {
            pixel,
            proj,
            pos_embed,
            backbone,
            ..
        } = self;
        let mut p = pixel.params_mut();
        p.extend(proj.params_mut());
        p.push(pos_embed);
        p.extend(backbone.params_mut());
        p
    }

    pub fn cast<G: Real>(&self) -> PixTModel<G> {
        let mut out = PixTModel::<G>::new(self.config.clone(), 0).expect("config already validated");
        copy_params(self.params(), out.params_mut());
        out
    }
}
