//! AdamW, global-norm gradient clipping and a reduce-on-plateau scheduler.

use serde::{Deserialize, Serialize};

use super::{Parameter, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One decoupled-weight-decay Adam update with bias correction, then zeroes
/// the gradients.
pub fn adamw_step<F: Real>(params: &mut [&mut Parameter<F>], lr: f64, hp: &AdamW) {
    let (b1, b2) = (F::of(hp.beta1), F::of(hp.beta2));
    let (one_m_b1, one_m_b2) = (F::of(1.0 - hp.beta1), F::of(1.0 - hp.beta2));
    let eps = F::of(hp.eps);
    let decay = F::of(1.0 - lr * hp.weight_decay);
    for p in params.iter_mut() {
        p.step += 1;
        let bc1 = F::of(1.0 - hp.beta1.powi(p.step as i32));
        let bc2 = F::of(1.0 - hp.beta2.powi(p.step as i32));
        let step = F::of(lr);
        let Parameter { value, grad, m, v, .. } = &mut **p;
        for (((w, g), m), v) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data_mut().iter_mut())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + one_m_b1 * *g;
            *v = b2 * *v + one_m_b2 * *g * *g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w = *w * decay - step * m_hat / (v_hat.sqrt() + eps);
            *g = F::zero();
        }
    }
}

/// Global L2 norm of all gradients.
pub fn grad_norm<F: Real>(params: &[&mut Parameter<F>]) -> f64 {
    params.iter().map(|p| p.grad.sq_norm()).sum::<f64>().sqrt()
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the factor applied (1 when no clipping happened).
pub fn clip_grad_norm<F: Real>(params: &mut [&mut Parameter<F>], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = grad_norm(params);
    if norm <= max_norm {
        return 1.0;
    }
    let scale = max_norm / norm;
    let s = F::of(scale);
    for p in params.iter_mut() {
        p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
    }
    scale
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.1,
            patience: 5,
            min_delta: 1e-4,
            min_lr: 0.0,
        }
    }
}

/// Lowers the learning rate once a minimized metric has gone `patience`
/// consecutive steps without improving by more than `min_delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub lr: f64,
    best: Option<f64>,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, config: PlateauConfig) -> Self {
        assert!(config.patience >= 1, "patience must be at least 1");
        assert!(config.factor > 0.0 && config.factor < 1.0, "factor must lie in (0, 1)");
        PlateauScheduler {
            config,
            lr,
            best: None,
            stale: 0,
        }
    }

    pub fn step(&mut self, metric: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(b) => metric < b - self.config.min_delta,
        };
        if improved {
            self.best = Some(metric);
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.config.patience {
                self.lr = (self.lr * self.config.factor).max(self.config.min_lr);
                self.stale = 0;
            }
        }
        self.lr
    }
}
