//! Adam with decoupled weight decay, and the learning-rate schedules used by
//! the two training recipes.

use serde::{Deserialize, Serialize};

use crate::params::ParameterVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
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
    /// Plain Adam (no weight decay).
    pub fn adam() -> Self {
        Self {
            weight_decay: 0.0,
            ..Self::default()
        }
    }
}

/// Optimizer state. Only slices flagged trainable are touched.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n: usize) -> Self {
        Self {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update from the accumulated gradients, with bias correction.
    pub fn step(&mut self, params: &mut ParameterVector, lr: f64) {
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let mask = params.trainable_mask();
        let grads = params.grads().to_vec();
        let values = params.values_mut();
        for i in 0..values.len() {
            if !mask[i] {
                continue;
            }
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            values[i] *= 1.0 - lr * self.cfg.weight_decay;
            values[i] -= lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// `base * factor^epoch`.
    ExpDecay { base: f64, factor: f64 },
    /// Linear ramp from 0 to `peak` across the batches of epoch 0, then
    /// `peak * factor^epoch`.
    WarmupExpDecay { peak: f64, factor: f64 },
    Constant { rate: f64 },
}

impl LrSchedule {
    pub fn rate(&self, epoch: usize, batch: usize, batches_per_epoch: usize) -> f64 {
        match *self {
            LrSchedule::ExpDecay { base, factor } => base * factor.powi(epoch as i32),
            LrSchedule::WarmupExpDecay { peak, factor } => {
                if epoch == 0 {
                    peak * (batch + 1) as f64 / batches_per_epoch.max(1) as f64
                } else {
                    peak * factor.powi(epoch as i32)
                }
            }
            LrSchedule::Constant { rate } => rate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn mask_schedule_decays_per_epoch() {
        let s = LrSchedule::ExpDecay {
            base: 0.001,
            factor: 0.96,
        };
        for k in 0..10 {
            assert_eq!(s.rate(k, 0, 1), 0.001 * 0.96f64.powi(k as i32));
        }
    }

    #[test]
    fn warmup_then_decay() {
        let s = LrSchedule::WarmupExpDecay {
            peak: 1.5e-4,
            factor: 0.97,
        };
        assert_eq!(s.rate(0, 0, 4), 1.5e-4 * 0.25);
        assert_eq!(s.rate(0, 3, 4), 1.5e-4);
        assert_eq!(s.rate(1, 0, 4), 1.5e-4 * 0.97);
        assert_eq!(s.rate(5, 2, 4), 1.5e-4 * 0.97f64.powi(5));
    }

    #[test]
    fn first_step_moves_by_lr_and_skips_frozen() {
        let mut p = ParameterVector::new();
        p.push("a", Tensor::from_elem((1, 2), 1.0), true);
        p.push("b", Tensor::from_elem((1, 1), 1.0), false);
        p.grads_mut().copy_from_slice(&[0.5, -2.0, 9.0]);
        let mut opt = AdamW::new(AdamWConfig::adam(), p.len());
        opt.step(&mut p, 0.1);
        // bias-corrected first step is lr * sign(g)
        assert!((p.values()[0] - 0.9).abs() < 1e-6);
        assert!((p.values()[1] - 1.1).abs() < 1e-6);
        assert_eq!(p.values()[2], 1.0);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = ParameterVector::new();
        p.push("a", Tensor::from_elem((1, 1), 2.0), true);
        let mut opt = AdamW::new(AdamWConfig::default(), 1);
        opt.step(&mut p, 0.1);
        assert!((p.values()[0] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-12);
    }
}
