use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
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

/// AdamW with decoupled weight decay, in the form popularised by PyTorch:
/// `θ ← θ(1 - τλ)` followed by the bias-corrected Adam step.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(n: usize, config: AdamWConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(theta.len(), self.m.len(), "parameter length");
        assert_eq!(grad.len(), self.m.len(), "gradient length");
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            theta[i] = theta[i] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Cosine annealing from `lr_max` at step 0 to `lr_min` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CosineSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.lr_max;
        }
        let s = step.min(self.total_steps) as f64 / self.total_steps as f64;
        self.lr_min + (self.lr_max - self.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * s).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(3, cfg);
        let mut theta = vec![1.0, -2.0, 0.5];
        opt.step(&mut theta, &[0.0; 3], 1e-3);
        assert_eq!(theta, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(1, cfg);
        let mut theta = vec![0.0];
        opt.step(&mut theta, &[1.0], 1e-3);
        // m̂ = 1, v̂ = 1
        assert!((theta[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn decay_is_decoupled_from_the_moments() {
        let mut opt = AdamW::new(1, AdamWConfig::default());
        let mut theta = vec![2.0];
        opt.step(&mut theta, &[0.0], 0.1);
        assert_eq!(theta[0], 2.0 * (1.0 - 0.1 * 0.01));
        assert_eq!(opt.m[0], 0.0);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = CosineSchedule {
            lr_max: 1e-3,
            lr_min: 1e-5,
            total_steps: 100,
        };
        assert_eq!(s.lr(0), 1e-3);
        assert_eq!(s.lr(100), 1e-5);
        assert!((s.lr(50) - 0.5 * (1e-3 + 1e-5)).abs() < 1e-18);
        assert_eq!(s.lr(150), 1e-5);
    }

    proptest! {
        #[test]
        fn schedule_is_nonincreasing(total in 1usize..500, max in 1e-5f64..1.0, frac in 0.0f64..1.0) {
            let s = CosineSchedule { lr_max: max, lr_min: max * frac, total_steps: total };
            for k in 0..total {
                prop_assert!(s.lr(k + 1) <= s.lr(k));
            }
        }

        #[test]
        fn step_size_is_bounded_by_lr(g in -1e3f64..1e3, lr in 1e-6f64..1e-1) {
            let cfg = AdamWConfig { weight_decay: 0.0, ..Default::default() };
            let mut opt = AdamW::new(1, cfg);
            let mut theta = vec![0.0];
            opt.step(&mut theta, &[g], lr);
            prop_assert!(theta[0].abs() <= lr * (1.0 + 1e-12));
        }
    }
}
