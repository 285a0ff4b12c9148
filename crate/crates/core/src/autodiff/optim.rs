//! SGD and Adam update rules with stepwise learning-rate decay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("learning rate must be positive, got {0}")]
    NonPositiveLr(f64),
    #[error("gradient length {got} does not match parameter length {expected}")]
    ShapeMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptMethod {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// Declarative optimizer settings, as they appear in experiment configs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: OptMethod,
    pub lr: f64,
    /// (epoch, factor) pairs; the rate is multiplied by `factor` when
    /// training enters the listed epoch.
    #[serde(default)]
    pub decay: Vec<(usize, f64)>,
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig { method: OptMethod::Adam, lr, decay: Vec::new() }
    }

    pub fn sgd(lr: f64) -> Self {
        OptimConfig { method: OptMethod::Sgd, lr, decay: Vec::new() }
    }

    pub fn with_decay(mut self, decay: Vec<(usize, f64)>) -> Self {
        self.decay = decay;
        self
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct OptimState {
    method: OptMethod,
    lr: f64,
    decay: Vec<(usize, f64)>,
    step_count: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimState {
    pub fn new(cfg: &OptimConfig, param_len: usize) -> Result<Self, OptimError> {
        if cfg.lr <= 0.0 {
            return Err(OptimError::NonPositiveLr(cfg.lr));
        }
        let moments = match cfg.method {
            OptMethod::Sgd => 0,
            OptMethod::Adam => param_len,
        };
        Ok(OptimState {
            method: cfg.method,
            lr: cfg.lr,
            decay: cfg.decay.clone(),
            step_count: 0,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Apply the configured decay factor when entering `epoch`.
    pub fn lr_decay(&mut self, epoch: usize) {
        for &(e, factor) in &self.decay {
            if e == epoch {
                self.lr *= factor;
            }
        }
    }

    /// One parameter update. Ascent with gradient g is, by construction,
    /// bit-identical to descent with -g.
    pub fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        direction: Direction,
    ) -> Result<(), OptimError> {
        if grads.len() != params.len() {
            return Err(OptimError::ShapeMismatch { expected: params.len(), got: grads.len() });
        }
        let negated;
        let g: &[f64] = match direction {
            Direction::Descent => grads,
            Direction::Ascent => {
                negated = grads.iter().map(|x| -x).collect::<Vec<f64>>();
                &negated
            }
        };
        self.step_count += 1;
        match self.method {
            OptMethod::Sgd => {
                for (p, &gv) in params.iter_mut().zip(g.iter()) {
                    *p -= self.lr * gv;
                }
            }
            OptMethod::Adam => {
                if self.m.len() != params.len() {
                    return Err(OptimError::ShapeMismatch {
                        expected: self.m.len(),
                        got: params.len(),
                    });
                }
                let t = self.step_count as f64;
                let bc1 = 1.0 - ADAM_BETA1.powf(t);
                let bc2 = 1.0 - ADAM_BETA2.powf(t);
                for i in 0..params.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their L2 norm is at most `cap`.
pub fn clip_l2_norm(grads: &mut [f64], cap: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > cap && norm > 0.0 {
        let k = cap / norm;
        for g in grads {
            *g *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let cfg = OptimConfig::sgd(0.1);
        let mut opt = OptimState::new(&cfg, 1).unwrap();
        let mut p = vec![1.0];
        opt.step(&mut p, &[2.0], Direction::Descent).unwrap();
        assert_eq!(p[0], 0.8);
    }

    #[test]
    fn ascent_is_descent_of_negated_gradient() {
        let cfg = OptimConfig::adam(0.01);
        let mut rng = crate::autodiff::SeededRng::new(3, 0);
        let p0: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let g: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let neg: Vec<f64> = g.iter().map(|x| -x).collect();

        let mut opt_a = OptimState::new(&cfg, 32).unwrap();
        let mut opt_b = OptimState::new(&cfg, 32).unwrap();
        let mut pa = p0.clone();
        let mut pb = p0;
        opt_a.step(&mut pa, &g, Direction::Ascent).unwrap();
        opt_b.step(&mut pb, &neg, Direction::Descent).unwrap();
        let bits_a: Vec<u64> = pa.iter().map(|x| x.to_bits()).collect();
        let bits_b: Vec<u64> = pb.iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        // After one step: m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps)
        let lr = 0.003;
        let cfg = OptimConfig::adam(lr);
        let mut opt = OptimState::new(&cfg, 2).unwrap();
        let mut p = vec![0.5, -1.5];
        let g = [0.7, -0.2];
        opt.step(&mut p, &g, Direction::Descent).unwrap();
        for (i, (&pv, &gv)) in p.iter().zip(g.iter()).enumerate() {
            let expected = [0.5, -1.5][i] - lr * gv / (gv.abs() + ADAM_EPS);
            assert!((pv - expected).abs() < 1e-15, "param {i}: {pv} vs {expected}");
            // magnitude of the first bias-corrected step is ~lr
            let delta = ([0.5, -1.5][i] - pv).abs();
            assert!((delta - lr).abs() < lr * 1e-6);
        }
    }

    #[test]
    fn decay_schedule() {
        let cfg = OptimConfig::adam(0.001).with_decay(vec![(10, 0.1), (20, 0.1), (30, 0.1)]);
        let mut opt = OptimState::new(&cfg, 0).unwrap();
        opt.lr_decay(10);
        assert!((opt.lr() - 1e-4).abs() < 1e-18);
        opt.lr_decay(11);
        assert!((opt.lr() - 1e-4).abs() < 1e-18);
        opt.lr_decay(20);
        assert!((opt.lr() - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn rejects_bad_lr() {
        assert!(OptimState::new(&OptimConfig::sgd(0.0), 4).is_err());
        assert!(OptimState::new(&OptimConfig::sgd(-1.0), 4).is_err());
    }

    #[test]
    fn clip_caps_norm() {
        let mut g = vec![3.0, 4.0];
        clip_l2_norm(&mut g, 1.0);
        let norm = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        let mut small = vec![0.3, 0.4];
        clip_l2_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }
}
