//! AdamW with decoupled weight decay and bias-corrected moments.

#![allow(clippy::needless_range_loop)]

use alloc::vec;
use alloc::vec::Vec;

use super::{Tensor, TensorError, TensorResult};
use crate::mathx;

/// Per-parameter optimizer state.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        AdamState {
            m: vec![0.0; numel],
            v: vec![0.0; numel],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn with_lr(lr: f64) -> Self {
        AdamW {
            lr,
            ..AdamW::default()
        }
    }

    /// One in-place update. Weight decay is applied directly to the
    /// parameter, outside the adaptive term.
    pub fn step(
        &self,
        param: &mut Tensor,
        grad: &Tensor,
        state: &mut AdamState,
    ) -> TensorResult<()> {
        if param.shape() != grad.shape() || param.numel() != state.m.len() {
            return Err(TensorError::ShapeMismatch {
                op: "adamw_step",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - mathx::powi(self.beta1, t);
        let bc2 = 1.0 - mathx::powi(self.beta2, t);
        let p = param.data_mut();
        for i in 0..p.len() {
            let g = grad.data()[i];
            state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
            state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = state.m[i] / bc1;
            let v_hat = state.v[i] / bc2;
            p[i] -= self.lr * (m_hat / (mathx::sqrt(v_hat) + self.eps))
                + self.lr * self.weight_decay * p[i];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = Tensor::from_vec(vec![1.5, -0.25]);
        let g = Tensor::from_vec(vec![0.0, 0.0]);
        let mut st = AdamState::new(2);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::with_lr(0.1)
        };
        opt.step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p.data(), &[1.5, -0.25]);
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        // scalar, g=1: m_hat = v_hat = 1, so the update is lr/(1+eps)
        let mut p = Tensor::scalar(2.0);
        let g = Tensor::scalar(1.0);
        let mut st = AdamState::new(1);
        let opt = AdamW {
            weight_decay: 0.0,
            ..AdamW::with_lr(0.01)
        };
        opt.step(&mut p, &g, &mut st).unwrap();
        assert!((p.item() - (2.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn decoupled_decay_scales_param() {
        let mut p = Tensor::scalar(4.0);
        let g = Tensor::scalar(0.0);
        let mut st = AdamState::new(1);
        let opt = AdamW {
            weight_decay: 0.1,
            ..AdamW::with_lr(0.1)
        };
        opt.step(&mut p, &g, &mut st).unwrap();
        assert!((p.item() - 4.0 * (1.0 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Tensor::from_vec(vec![1.0, 2.0]);
        let g = Tensor::from_vec(vec![1.0]);
        let mut st = AdamState::new(2);
        assert!(AdamW::default().step(&mut p, &g, &mut st).is_err());
    }
}
