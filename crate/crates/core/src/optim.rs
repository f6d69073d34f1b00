//! AdamW with a linear-warmup / cosine-decay learning-rate schedule.

use serde::{Deserialize, Serialize};

/// Warmup then cosine decay, evaluated at a (possibly fractional) epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmupCosine {
    pub lr_max: f64,
    pub warmup_epochs: f64,
    pub max_epochs: f64,
}

impl WarmupCosine {
    pub fn lr_at(&self, epoch: f64) -> f64 {
        if epoch < self.warmup_epochs {
            self.lr_max * epoch / self.warmup_epochs
        } else {
            let span = self.max_epochs - self.warmup_epochs;
            let progress = ((epoch - self.warmup_epochs) / span).min(1.0);
            self.lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
        }
    }
}

/// Adam moments with decoupled weight decay applied directly to the
/// parameters. `decay_mask[i]` selects which entries are decayed.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    decay_mask: Vec<bool>,
    t: u64,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64, decay_mask: Vec<bool>) -> Self {
        let n = decay_mask.len();
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            decay_mask,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            if self.decay_mask[i] {
                params[i] -= lr * self.weight_decay * params[i];
            }
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
