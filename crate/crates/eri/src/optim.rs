//! AdamW with decoupled weight decay and the step learning-rate schedule.

use crate::error::{EriError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-4,
            decay_factor: 0.5,
            decay_every: 10,
            weight_decay: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// lr0 · factor^floor(e / every).
pub fn lr_at_epoch(cfg: &TrainConfig, epoch: usize) -> f64 {
    cfg.lr0 * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// Serializable optimizer moments for mid-training checkpoints.
#[derive(Debug, Clone, Default)]
pub struct OptSnapshot {
    pub step: u64,
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    m: IndexMap<String, Tensor>,
    v: IndexMap<String, Tensor>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    pub fn resume(cfg: &TrainConfig, snap: OptSnapshot) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: snap.step,
            m: snap.m,
            v: snap.v,
        }
    }

    pub fn snapshot(&self) -> OptSnapshot {
        OptSnapshot {
            step: self.step,
            m: self.m.clone(),
            v: self.v.clone(),
        }
    }

    /// One optimizer step over every parameter:
    ///   m ← β₁m + (1−β₁)g;  v ← β₂v + (1−β₂)g²
    ///   θ ← θ − lr·(m̂/(√v̂ + ε) + λθ)
    /// λ is applied only to entries registered with decay=true.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !p.grad.all_finite() {
                return Err(EriError::State(format!("non-finite gradient for {name}")));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.rows(), p.value.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.value.rows(), p.value.cols()));
            let lambda = if p.decay { self.weight_decay } else { 0.0 };
            for i in 0..p.value.len() {
                let g = p.grad.data()[i];
                let mi = self.beta1 * m.data()[i] + (1.0 - self.beta1) * g;
                let vi = self.beta2 * v.data()[i] + (1.0 - self.beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                let theta = p.value.data()[i];
                p.value.data_mut()[i] =
                    theta - lr * (m_hat / (v_hat.sqrt() + self.eps) + lambda * theta);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_values() {
        let cfg = TrainConfig::default();
        for e in 0..10 {
            assert_eq!(lr_at_epoch(&cfg, e), 1e-4);
        }
        assert_eq!(lr_at_epoch(&cfg, 10), 5e-5);
        assert_eq!(lr_at_epoch(&cfg, 25), 2.5e-5);
    }

    #[test]
    fn zero_gradient_applies_pure_decay() {
        // g = 0 keeps m = v = 0, so θ' = θ·(1 − lr·λ)
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.register("w", Tensor::scalar(2.0), true).unwrap();
        let mut opt = AdamW::new(&cfg);
        opt.step(&mut params, 1e-4).unwrap();
        let expect = 2.0 * (1.0 - 1e-4 * 0.5);
        assert!((params.value("w").unwrap().item() - expect).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_signed_lr_for_large_gradients() {
        // bias-corrected first step: Δ = −lr·g/(|g| + ε·√(1−β₂)) ≈ −lr·sign(g)
        let mut cfg = TrainConfig::default();
        cfg.weight_decay = 0.0;
        let mut params = ParamStore::new();
        params.register("w", Tensor::scalar(1.0), true).unwrap();
        params.get_mut("w").unwrap().grad = Tensor::scalar(40.0);
        let mut opt = AdamW::new(&cfg);
        opt.step(&mut params, 1e-4).unwrap();
        // hand evaluation: m̂ = g, v̂ = g², update = g/(|g| + ε) ≈ 1
        let g = 40.0_f64;
        let expect = 1.0 - 1e-4 * (g / (g.abs() + 1e-8));
        assert!((params.value("w").unwrap().item() - expect).abs() < 1e-12);
        assert!((params.value("w").unwrap().item() - (1.0 - 1e-4)).abs() < 1e-10);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut params = ParamStore::new();
            params
                .register("w", Tensor::row_vector(vec![0.5, -0.25]), true)
                .unwrap();
            let mut opt = AdamW::new(&cfg);
            for k in 1..=5 {
                params.get_mut("w").unwrap().grad =
                    Tensor::row_vector(vec![0.1 * k as f64, -0.2]);
                opt.step(&mut params, 1e-3).unwrap();
            }
            params.value("w").unwrap().data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_state_error() {
        let cfg = TrainConfig::default();
        let mut params = ParamStore::new();
        params.register("w", Tensor::scalar(1.0), true).unwrap();
        params.get_mut("w").unwrap().grad = Tensor::scalar(f64::NAN);
        let mut opt = AdamW::new(&cfg);
        assert!(opt.step(&mut params, 1e-4).is_err());
    }
}
