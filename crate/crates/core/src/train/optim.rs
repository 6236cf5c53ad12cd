//! Learning-rate schedule and the AdamW optimizer.

use crate::error::{EstError, Result};
use crate::model::params::{Gradients, ParamStore};

/// Linear warmup to `lr`, then cosine decay reaching `min_lr_factor * lr`
/// on the final step.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, lr: f64, min_lr_factor: f64) -> Result<f64> {
    if total_steps <= warmup_steps {
        return Err(EstError::Config(format!(
            "total steps ({total_steps}) must exceed warmup steps ({warmup_steps})"
        )));
    }
    if step >= total_steps {
        return Err(EstError::Config(format!("step {step} is past the last step {}", total_steps - 1)));
    }
    if step < warmup_steps {
        return Ok(lr * (step + 1) as f64 / warmup_steps as f64);
    }
    let span = total_steps - warmup_steps - 1;
    let progress = if span == 0 {
        1.0
    } else {
        (step - warmup_steps) as f64 / span as f64
    };
    let lr_min = min_lr_factor * lr;
    Ok(lr_min + 0.5 * (lr - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Adam moments with weight decay applied directly to the parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).data.len()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = params.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id);
            let p = &mut params.get_mut(id).data;
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * (mh / (vh.sqrt() + self.eps) + self.weight_decay * p[i]);
            }
        }
    }
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}
