use serde::{Deserialize, Serialize};

use super::Parameterized;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent, no moment buffers.
    Sgd,
    /// Adaptive moment estimation.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

/// Optimizer state for one parameter group.
///
/// Moment buffers are created lazily on the first step and must keep lining
/// up with the group's blocks afterwards.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    kind: OptimizerKind,
    lr: f64,
    max_grad_norm: Option<f64>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            max_grad_norm: None,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    /// Rescales the gradient so its global L2 norm never exceeds `max_norm`.
    pub fn with_max_grad_norm(mut self, max_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_norm;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.second
    }

    /// Applies one update from the accumulated grads, then zeroes them.
    ///
    /// A non-finite gradient aborts before any value is touched.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P) -> Result<()> {
        let mut blocks = params.blocks_mut();

        for b in &blocks {
            if let Some((index, &value)) = b.grads().iter().enumerate().find(|(_, g)| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    block: b.name().to_string(),
                    index,
                    value,
                });
            }
        }

        if self.first.is_empty() {
            self.first = blocks.iter().map(|b| vec![0.0; b.len()]).collect();
            self.second = self.first.clone();
        } else if self.first.len() != blocks.len()
            || self.first.iter().zip(&blocks).any(|(m, b)| m.len() != b.len())
        {
            return Err(Error::Usage(
                "optimizer state does not match the parameter group it is applied to".into(),
            ));
        }

        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = blocks
                    .iter()
                    .flat_map(|b| b.grads().iter())
                    .map(|g| g * g)
                    .sum::<f64>()
                    .sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        self.step += 1;
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for b in blocks.iter_mut() {
                    let (values, grads) = b.split_mut();
                    for (v, g) in values.iter_mut().zip(grads.iter()) {
                        *v -= lr * g * scale;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for ((b, m), s) in blocks.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    let (values, grads) = b.split_mut();
                    for i in 0..values.len() {
                        let g = grads[i] * scale;
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                        s[i] = beta2 * s[i] + (1.0 - beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let s_hat = s[i] / bc2;
                        values[i] -= lr * m_hat / (s_hat.sqrt() + eps);
                    }
                }
            }
        }

        for b in blocks.iter_mut() {
            if let Some(index) = b.values().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteValue {
                    block: b.name().to_string(),
                    index,
                });
            }
            b.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParameterBlock;

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut p = ParameterBlock::from_values("p", &[3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut opt = OptimizerState::sgd(0.1);
        opt.step(&mut p).unwrap();
        assert_eq!(p, before);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn sgd_update_rule() {
        let mut p = ParameterBlock::filled("p", &[1], 2.0);
        p.grads_mut()[0] = 1.0;
        OptimizerState::sgd(0.1).step(&mut p).unwrap();
        assert!((p.values()[0] - 1.9).abs() < 1e-15);
        assert_eq!(p.grads()[0], 0.0);
    }

    #[test]
    fn adam_two_steps_match_hand_calculation() {
        let mut p = ParameterBlock::filled("p", &[1], 1.0);
        let mut opt = OptimizerState::adam(0.1);

        // step 1, g = 0.5: m = 0.05, v = 0.00025, m_hat = 0.5, v_hat = 0.25
        p.grads_mut()[0] = 0.5;
        opt.step(&mut p).unwrap();
        let expected1 = 1.0 - 0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p.values()[0] - expected1).abs() < 1e-15);
        assert!((opt.first_moments()[0][0] - 0.05).abs() < 1e-15);
        assert!((opt.second_moments()[0][0] - 0.00025).abs() < 1e-15);

        // step 2, g = -1: m = 0.045 - 0.1 = -0.055, v = 0.00024975 + 0.001 = 0.00124975
        p.grads_mut()[0] = -1.0;
        opt.step(&mut p).unwrap();
        let m_hat = -0.055 / (1.0 - 0.81);
        let v_hat = 0.00124975 / (1.0 - 0.999f64 * 0.999);
        let expected2 = expected1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.values()[0] - expected2).abs() < 1e-12);
        assert_eq!(opt.step_count(), 2);
    }

    #[test]
    fn nan_gradient_names_block() {
        let mut p = ParameterBlock::filled("vfn.dqn.0.weight", &[2], 1.0);
        p.grads_mut()[1] = f64::NAN;
        let err = OptimizerState::adam(0.1).step(&mut p).unwrap_err();
        match err {
            Error::NonFiniteGradient { block, index, .. } => {
                assert_eq!(block, "vfn.dqn.0.weight");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.values(), &[1.0, 1.0]);
    }

    #[test]
    fn clipping_bounds_update() {
        let mut p = ParameterBlock::filled("p", &[2], 0.0);
        p.grads_mut().copy_from_slice(&[3.0, 4.0]);
        OptimizerState::sgd(1.0)
            .with_max_grad_norm(Some(1.0))
            .step(&mut p)
            .unwrap();
        assert!((p.values()[0] + 0.6).abs() < 1e-12);
        assert!((p.values()[1] + 0.8).abs() < 1e-12);
    }

    #[test]
    fn mismatched_group_is_usage_error() {
        let mut a = ParameterBlock::filled("a", &[2], 0.0);
        let mut b = ParameterBlock::filled("b", &[3], 0.0);
        let mut opt = OptimizerState::adam(0.1);
        opt.step(&mut a).unwrap();
        assert!(matches!(opt.step(&mut b), Err(Error::Usage(_))));
    }
}
