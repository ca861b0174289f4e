use super::{Grads, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// global-norm clip threshold; `<= 0` disables clipping
    pub clip_norm: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-2, clip_norm: 5.0 }
    }
}

/// Linear warmup over the first 5% of steps, then cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        LrSchedule { base_lr, total_steps, warmup_frac: 0.05 }
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let warm = ((self.total_steps as f64 * self.warmup_frac).round() as u64).max(1);
        if step < warm {
            return self.base_lr * (step + 1) as f64 / warm as f64;
        }
        let span = self.total_steps.saturating_sub(warm).max(1) as f64;
        let progress = ((step - warm) as f64 / span).min(1.0);
        self.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Adam with decoupled weight decay and global-norm gradient clipping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config }
    }

    /// Applies one update with learning rate `lr`. Returns the pre-clip global
    /// gradient norm. A non-finite gradient rejects the step and leaves
    /// `params` untouched.
    pub fn step<T: Scalar>(&self, params: &mut ParamSet<T>, grads: &Grads<T>, lr: f64) -> Result<f64> {
        grads.check_finite()?;
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::Numeric("gradient norm overflow".into()));
        }
        let c = &self.config;
        let clip = if c.clip_norm > 0.0 && norm > c.clip_norm { c.clip_norm / norm } else { 1.0 };
        params.step += 1;
        let t = params.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one_b1, one_b2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let decay = T::lit(1.0 - lr * c.weight_decay);
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        let clip = T::lit(clip);
        let names: Vec<String> = params.names().map(str::to_owned).collect();
        for name in names {
            let g = match grads.get(&name) {
                Some(g) => g,
                None => continue,
            };
            let n = g.len();
            let m = params.first_moment.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let mut m_local = std::mem::take(m);
            let v = params.second_moment.entry(name.clone()).or_insert_with(|| vec![T::zero(); n]);
            let mut v_local = std::mem::take(v);
            let p = params.get_mut(&name)?;
            for i in 0..n {
                let gi = g[i] * clip;
                m_local[i] = b1 * m_local[i] + one_b1 * gi;
                v_local[i] = b2 * v_local[i] + one_b2 * gi * gi;
                let update = step_size * m_local[i] / ((v_local[i] * inv_bc2).sqrt() + eps);
                p.data[i] = p.data[i] * decay - update;
            }
            params.first_moment.insert(name.clone(), m_local);
            params.second_moment.insert(name, v_local);
        }
        Ok(norm)
    }
}
