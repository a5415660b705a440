use super::blocks::{copy_params, Backbone, BackboneTrace, Mlp, MlpTrace, SequenceEncoder, SequenceTrace};
use super::{Forward, MovTConfig};
use crate::error::{Error, Result};
use crate::nn::{Mode, Parameter, Real, Tensor};
use crate::seed;
use crate::trackio::{compute_velocity, mean_position, PointTrackSet, VelocityTensor};

/// Raw per-track inputs: velocity `[N, T, 3]` and mean position `[N, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MovTInput {
    pub velocity: VelocityTensor,
    pub means: Vec<[f64; 2]>,
}

impl MovTInput {
    pub fn from_set(set: &PointTrackSet) -> Self {
        MovTInput {
            velocity: compute_velocity(set),
            means: mean_position(set),
        }
    }

    pub fn tracks(&self) -> usize {
        self.velocity.tracks
    }

    /// Flat view in the order used for input gradients: all velocity values,
    /// then all mean coordinates.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.velocity.values.iter().map(|&x| f64::from(x)).collect();
        v.extend(self.means.iter().flat_map(|m| m.iter().copied()));
        v
    }
}

/// Gradients with respect to [`MovTInput`].
#[derive(Debug, Clone)]
pub struct MovTInputGrad<F> {
    /// `[N, T, 3]`, with respect to unscaled velocity and occlusion.
    pub velocity: Tensor<F>,
    /// `[N, 2]`
    pub means: Tensor<F>,
}

#[derive(Debug, Clone)]
pub struct MovTModel<F> {
    pub config: MovTConfig,
    pub motion: SequenceEncoder<F>,
    pub position: Mlp<F>,
    pub backbone: Backbone<F>,
}

pub struct MovTTrace<F> {
    motion: SequenceTrace<F>,
    position: MlpTrace<F>,
    backbone: BackboneTrace<F>,
    tracks: usize,
    frames: usize,
}

impl<F: Real> MovTModel<F> {
    pub fn new(config: MovTConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::rng(seed, "init", 0);
        let d = config.embed_dim;
        let motion = SequenceEncoder::new(3, d, &config.motion, &mut rng);
        let position = Mlp::new(2, config.position_mlp_hidden, d, config.position_mlp_layers, &mut rng);
        let backbone = Backbone::new(config.model_dim(), &config.transformer, config.head, &mut rng)?;
        Ok(MovTModel {
            config,
            motion,
            position,
            backbone,
        })
    }

    /// Per-track motion embeddings `E_M`, `[N, D]`.
    pub fn motion_encode(&self, velocity: &VelocityTensor) -> Result<Tensor<F>> {
        let (v, _) = Self::input_tensors(&MovTInput {
            velocity: velocity.clone(),
            means: vec![[0.0; 2]; velocity.tracks],
        })?;
        Ok(self.motion.forward(self.scale_velocity(v))?.0)
    }

    /// Per-track position embeddings `E_P`, `[N, D]`.
    pub fn position_encode(&self, means: &[[f64; 2]]) -> Result<Tensor<F>> {
        let data = means.iter().flat_map(|m| [F::of(m[0]), F::of(m[1])]).collect();
        Ok(self.position.forward(Tensor::from_vec(&[means.len(), 2], data)?)?.0)
    }

    /// Unscaled velocity `[N, T, 3]` and means `[N, 2]` as tensors.
    pub fn input_tensors(input: &MovTInput) -> Result<(Tensor<F>, Tensor<F>)> {
        let v = &input.velocity;
        let vel = Tensor::from_vec(&[v.tracks, v.frames, 3], v.values.iter().map(|&x| F::of_f32(x)).collect())?;
        let data = input.means.iter().flat_map(|m| [F::of(m[0]), F::of(m[1])]).collect();
        let means = Tensor::from_vec(&[input.means.len(), 2], data)?;
        Ok((vel, means))
    }

    fn scale_velocity(&self, mut v: Tensor<F>) -> Tensor<F> {
        let s = F::of(self.config.velocity_scale);
        for c in v.data_mut().chunks_exact_mut(3) {
            c[0] *= s;
            c[1] *= s;
        }
        v
    }

    pub fn forward(&self, input: &MovTInput, mode: &mut Mode) -> Result<(Forward<F>, MovTTrace<F>)> {
        if input.means.len() != input.velocity.tracks {
            return Err(Error::shape(format!(
                "{} mean positions for {} tracks",
                input.means.len(),
                input.velocity.tracks
            )));
        }
        let (v, m) = Self::input_tensors(input)?;
        self.forward_raw(&v, &m, mode)
    }

    /// Runs on unscaled velocity `[N, T, 3]` and means `[N, 2]`.
    pub fn forward_raw(&self, velocity: &Tensor<F>, means: &Tensor<F>, mode: &mut Mode) -> Result<(Forward<F>, MovTTrace<F>)> {
        let [n, t, c] = velocity.shape() else {
            return Err(Error::shape(format!("velocity must be [N, T, 3], got {:?}", velocity.shape())));
        };
        let (n, t) = (*n, *t);
        if *c != 3 {
            return Err(Error::shape(format!("velocity must be [N, T, 3], got {:?}", velocity.shape())));
        }
        means.expect_shape(&[n, 2], "mean positions")?;
        let (em, motion) = self.motion.forward(self.scale_velocity(velocity.clone()))?;
        let (ep, position) = self.position.forward(means.clone())?;
        let d = self.config.embed_dim;
        let mut tokens = Vec::with_capacity(n * 2 * d);
        for (m, p) in em.data().chunks_exact(d).zip(ep.data().chunks_exact(d)) {
            tokens.extend_from_slice(m);
            tokens.extend_from_slice(p);
        }
        let tokens = Tensor::from_vec(&[n, 2 * d], tokens)?;
        let (output, embedding, backbone) = self.backbone.forward(tokens, mode)?;
        Ok((
            Forward { output, embedding },
            MovTTrace {
                motion,
                position,
                backbone,
                tracks: n,
                frames: t,
            },
        ))
    }

    /// Accumulates parameter gradients and returns input gradients.
    pub fn backward(&mut self, trace: &MovTTrace<F>, g_out: &Tensor<F>) -> Result<MovTInputGrad<F>> {
        let d = self.config.embed_dim;
        let n = trace.tracks;
        let g_tokens = self.backbone.backward(&trace.backbone, g_out)?;
        let mut g_m = Vec::with_capacity(n * d);
        let mut g_p = Vec::with_capacity(n * d);
        for row in g_tokens.data().chunks_exact(2 * d) {
            g_m.extend_from_slice(&row[..d]);
            g_p.extend_from_slice(&row[d..]);
        }
        let mut g_vel = self.motion.backward(&trace.motion, &Tensor::from_vec(&[n, d], g_m)?)?;
        let s = F::of(self.config.velocity_scale);
        for c in g_vel.data_mut().chunks_exact_mut(3) {
            c[0] *= s;
            c[1] *= s;
        }
        let g_means = self.position.backward(&trace.position, &Tensor::from_vec(&[n, d], g_p)?)?;
        debug_assert_eq!(g_vel.shape(), &[n, trace.frames, 3]);
        Ok(MovTInputGrad {
            velocity: g_vel,
            means: g_means,
        })
    }

    pub fn attention<'a>(trace: &'a MovTTrace<F>) -> Vec<&'a [Vec<F>]> {
        Backbone::attention(&trace.backbone)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p = self.motion.params();
        p.extend(self.position.params());
        p.extend(self.backbone.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let MovTModel {
            motion,
            position,
            backbone,
            ..
        } = self;
        let mut p = motion.params_mut();
        p.extend(position.params_mut());
        p.extend(backbone.params_mut());
        p
    }

    pub fn cast<G: Real>(&self) -> MovTModel<G> {
        let mut out = MovTModel::<G>::new(self.config.clone(), 0).expect("config already validated");
        copy_params(self.params(), out.params_mut());
        out
    }
}
