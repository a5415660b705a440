//! Pre-norm transformer encoder block:
//! `x + Drop(MHSA(LN(x)))`, then `x + Drop(W₂·ReLU(W₁·LN(x)))`.

use super::layers::{
    Dropout, DropoutCache, LayerNorm, LayerNormCache, Linear, LinearCache, Mhsa, MhsaCache, Mode, Relu,
    ReluCache,
};
use super::{Parameter, Real, Tensor};
use crate::error::Result;
use crate::seed::Rng;

#[derive(Debug, Clone)]
pub struct EncoderLayer<F> {
    pub norm1: LayerNorm<F>,
    pub attn: Mhsa<F>,
    pub norm2: LayerNorm<F>,
    pub ff1: Linear<F>,
    pub ff2: Linear<F>,
    pub dropout: Dropout,
}

pub struct EncoderCache<F> {
    norm1: LayerNormCache<F>,
    attn: MhsaCache<F>,
    drop1: DropoutCache<F>,
    norm2: LayerNormCache<F>,
    ff1: LinearCache<F>,
    relu: ReluCache,
    ff2: LinearCache<F>,
    drop2: DropoutCache<F>,
}

impl<F: Real> EncoderLayer<F> {
    pub fn new(dim: usize, heads: usize, ff_mult: usize, dropout: f64, rng: &mut Rng) -> Result<Self> {
        Ok(EncoderLayer {
            norm1: LayerNorm::new(dim),
            attn: Mhsa::new(dim, heads, dropout, rng)?,
            norm2: LayerNorm::new(dim),
            ff1: Linear::new(dim, dim * ff_mult, rng),
            ff2: Linear::new(dim * ff_mult, dim, rng),
            dropout: Dropout { p: dropout },
        })
    }

    pub fn forward(&self, x: Tensor<F>, mode: &mut Mode) -> Result<(Tensor<F>, EncoderCache<F>)> {
        let (h, norm1) = self.norm1.forward(x.clone())?;
        let (a, attn) = self.attn.forward(h, mode)?;
        let (a, drop1) = self.dropout.forward(a, mode);
        let mut x2 = x;
        for (v, &d) in x2.data_mut().iter_mut().zip(a.data()) {
            *v += d;
        }
        let (h2, norm2) = self.norm2.forward(x2.clone())?;
        let (f, ff1) = self.ff1.forward(h2)?;
        let (f, relu) = Relu::forward(f);
        let (f, ff2) = self.ff2.forward(f)?;
        let (f, drop2) = self.dropout.forward(f, mode);
        let mut y = x2;
        for (v, &d) in y.data_mut().iter_mut().zip(f.data()) {
            *v += d;
        }
        Ok((
            y,
            EncoderCache {
                norm1,
                attn,
                drop1,
                norm2,
                ff1,
                relu,
                ff2,
                drop2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &EncoderCache<F>, gy: &Tensor<F>) -> Result<Tensor<F>> {
        let g = Dropout::backward(&cache.drop2, gy.clone());
        let g = self.ff2.backward(&cache.ff2, &g)?;
        let g = Relu::backward(&cache.relu, &g)?;
        let g = self.ff1.backward(&cache.ff1, &g)?;
        let g = self.norm2.backward(&cache.norm2, &g)?;
        let mut gx2 = gy.clone();
        for (v, &d) in gx2.data_mut().iter_mut().zip(g.data()) {
            *v += d;
        }
        let g = Dropout::backward(&cache.drop1, gx2.clone());
        let g = self.attn.backward(&cache.attn, &g)?;
        let g = self.norm1.backward(&cache.norm1, &g)?;
        let mut gx = gx2;
        for (v, &d) in gx.data_mut().iter_mut().zip(g.data()) {
            *v += d;
        }
        Ok(gx)
    }

    pub fn attention(cache: &EncoderCache<F>) -> &[Vec<F>] {
        Mhsa::attention(&cache.attn)
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut p: Vec<&Parameter<F>> = self.norm1.params().into();
        p.extend(self.attn.params());
        p.extend(self.norm2.params());
        p.extend(self.ff1.params());
        p.extend(self.ff2.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let EncoderLayer {
            norm1,
            attn,
            norm2,
            ff1,
            ff2,
            ..
        } = self;
        let mut p: Vec<&mut Parameter<F>> = norm1.params_mut().into();
        p.extend(attn.params_mut());
        p.extend(norm2.params_mut());
        p.extend(ff1.params_mut());
        p.extend(ff2.params_mut());
        p
    }
}
