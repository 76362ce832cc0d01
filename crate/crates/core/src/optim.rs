//! AdamW with decoupled weight decay, warmup-plus-cosine learning rate and
//! global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            peak_lr: 1e-4,
            warmup_steps: 1000,
            total_steps: 10_000,
            min_lr: 0.0,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.warmup_steps && self.warmup_steps < self.total_steps) {
            return Err(Error::InvalidConfig(format!(
                "schedule needs 0 < warmup_steps ({}) < total_steps ({})",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.peak_lr > 0.0) || !(self.min_lr >= 0.0) || self.min_lr > self.peak_lr {
            return Err(Error::InvalidConfig(format!(
                "schedule needs 0 <= min_lr ({}) <= peak_lr ({}) and peak_lr > 0",
                self.min_lr, self.peak_lr
            )));
        }
        Ok(())
    }
}

/// Linear warmup to `peak_lr`, then cosine decay to `min_lr` at `total_steps`.
pub fn lr_at_step(step: u64, cfg: &ScheduleConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::ScheduleExhausted { step, total: cfg.total_steps });
    }
    if step < cfg.warmup_steps {
        return Ok(cfg.peak_lr * step as f64 / cfg.warmup_steps as f64);
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    Ok(cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Rescales all gradients jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm observed before clipping.
pub fn clip_global_norm<T: Real, P: ParamSet<T>>(grads: &mut P, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidConfig(format!("max_norm must be > 0, got {max_norm}")));
    }
    let norm = grads.tensors().iter().map(|(_, t)| t.sum_sq()).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NumericFault { stage: "gradient clipping", layer: None });
    }
    if norm > max_norm {
        for (_, t) in grads.tensors_mut() {
            for g in t.data_mut() {
                *g = T::of(g.f64() * max_norm / norm);
            }
        }
    }
    Ok(norm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid AdamW settings: {self:?}")));
        }
        Ok(())
    }
}

/// Moment estimates, one pair of tensors per parameter tensor in the
/// parameter set's canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T: Real = f32> {
    pub step: u64,
    pub config: AdamWConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new<P: ParamSet<T>>(params: &P, config: AdamWConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            step: 0,
            config,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One AdamW update. Decay applies to weight matrices only.
    pub fn apply<P: ParamSet<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate must be >= 0, got {lr}")));
        }
        let grads = grads.tensors();
        let mut params = params.tensors_mut();
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::LengthMismatch(params.len(), grads.len()));
        }
        for (i, ((_, p), (_, g))) in params.iter().zip(&grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::dim("adamw_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        let AdamWConfig { beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, ((kind, p), (_, g))) in params.iter_mut().zip(&grads).enumerate() {
            let wd = if kind.decays() { weight_decay } else { 0.0 };
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, (theta, grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gj = grad.f64();
                let mj = beta1 * m[j].f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v[j].f64() + (1.0 - beta2) * gj * gj;
                m[j] = T::of(mj);
                v[j] = T::of(vj);
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                let t = theta.f64();
                *theta = T::of(t - lr * (m_hat / (v_hat.sqrt() + eps) + wd * t));
            }
        }
        Ok(())
    }
}
