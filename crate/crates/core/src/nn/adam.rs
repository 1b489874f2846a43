//! Adam and AdamW with bias-corrected moment estimates. AdamW applies
//! its decay directly to the weights (decoupled), not through the
//! gradient.

use serde::{Deserialize, Serialize};

use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Used by the decoupled (AdamW) step only.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }

    pub fn with_decay(lr: f64, weight_decay: f64) -> Self {
        AdamConfig { weight_decay, ..AdamConfig::new(lr) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(param: &Tensor) -> Self {
        AdamState {
            m: Tensor::zeros(param.shape()),
            v: Tensor::zeros(param.shape()),
            step: 0,
        }
    }
}

fn moment_update(cfg: &AdamConfig, param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
    debug_assert_eq!(param.shape(), grad.shape());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for ((p, g), (mi, vi)) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(m.iter_mut().zip(v.iter_mut()))
    {
        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * g;
        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * g * g;
        let m_hat = *mi / bc1;
        let v_hat = *vi / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Plain Adam step (no weight decay).
pub fn adam_step(cfg: &AdamConfig, param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
    moment_update(cfg, param, grad, state);
}

/// AdamW step: weights shrink by lr * weight_decay before the adaptive
/// update.
pub fn adamw_step(cfg: &AdamConfig, param: &mut Tensor, grad: &Tensor, state: &mut AdamState) {
    let shrink = 1.0 - cfg.lr * cfg.weight_decay;
    for p in param.data_mut() {
        *p *= shrink;
    }
    moment_update(cfg, param, grad, state);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let cfg = AdamConfig::new(0.01);
        let mut p = Tensor::from_vec(&[2], vec![1.5, -0.5]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::zeros_like(&p);
        adam_step(&cfg, &mut p, &g, &mut st);
        assert_eq!(p.data(), &[1.5, -0.5]);
    }

    #[test]
    fn single_step_matches_closed_form() {
        // One step with g = 1: m̂ = 1, v̂ = 1, update = -lr / (1 + eps).
        let cfg = AdamConfig::new(0.001);
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let g = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let mut st = AdamState::zeros_like(&p);
        adam_step(&cfg, &mut p, &g, &mut st);
        let expect = -cfg.lr / (1.0 + cfg.eps);
        assert!((p.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn adamw_zero_grad_scales_by_decay() {
        let cfg = AdamConfig::with_decay(0.1, 0.5);
        let mut p = Tensor::from_vec(&[2], vec![2.0, -4.0]).unwrap();
        let g = Tensor::zeros(&[2]);
        let mut st = AdamState::zeros_like(&p);
        adamw_step(&cfg, &mut p, &g, &mut st);
        assert_eq!(p.data(), &[2.0 * 0.95, -4.0 * 0.95]);
    }

    #[test]
    fn lr_zero_freezes_params() {
        let cfg = AdamConfig::new(0.0);
        let mut p = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[2], vec![0.3, -0.7]).unwrap();
        let mut st = AdamState::zeros_like(&p);
        for _ in 0..5 {
            adam_step(&cfg, &mut p, &g, &mut st);
        }
        assert_eq!(p.data(), &[1.0, 2.0]);
    }
}
