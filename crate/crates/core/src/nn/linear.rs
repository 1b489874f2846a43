//! Dense layer, ReLU, numerically stable softmax, and the weighted
//! two-class cross-entropy used by the risk head.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    /// [out, in]
    pub weight: Tensor,
    /// [out]
    pub bias: Tensor,
}

impl LinearParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            weight: Tensor::zeros(&[out_dim, in_dim]),
            bias: Tensor::zeros(&[out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrads {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearGrads {
    pub fn zeros_like(p: &LinearParams) -> Self {
        LinearGrads {
            weight: Tensor::zeros(p.weight.shape()),
            bias: Tensor::zeros(p.bias.shape()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearCache {
    pub input: Vec<f64>,
}

pub fn linear_forward(p: &LinearParams, x: &[f64]) -> Result<(Vec<f64>, LinearCache)> {
    if x.len() != p.in_dim() {
        return Err(Error::invalid(format!(
            "linear input dim {} != {}",
            x.len(),
            p.in_dim()
        )));
    }
    let mut y = p.weight.matvec(x);
    for (v, b) in y.iter_mut().zip(p.bias.data()) {
        *v += b;
    }
    Ok((y, LinearCache { input: x.to_vec() }))
}

/// Returns dx; accumulates parameter gradients.
pub fn linear_backward(
    p: &LinearParams,
    cache: &LinearCache,
    dy: &[f64],
    grads: &mut LinearGrads,
) -> Vec<f64> {
    grads.weight.add_outer(dy, &cache.input);
    for (b, g) in grads.bias.data_mut().iter_mut().zip(dy) {
        *b += g;
    }
    p.weight.matvec_t(dy)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Max-subtracted softmax; rejects non-finite logits.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax of empty vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logits"));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// loss = -weight[label] * ln p[label]; also returns the probabilities.
pub fn weighted_cross_entropy(
    logits: &[f64],
    label: usize,
    class_weights: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() || class_weights.len() != logits.len() {
        return Err(Error::invalid("label/class-weight dims"));
    }
    let probs = softmax(logits)?;
    let p = probs[label].max(f64::MIN_POSITIVE);
    Ok((-class_weights[label] * p.ln(), probs))
}

/// d loss / d logits for an upstream gradient `dloss`.
pub fn weighted_cross_entropy_backward(
    probs: &[f64],
    label: usize,
    class_weights: &[f64],
    dloss: f64,
) -> Vec<f64> {
    let w = class_weights[label];
    probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let onehot = if i == label { 1.0 } else { 0.0 };
            dloss * w * (p - onehot)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_logits_split_evenly() {
        let p = softmax(&[3.0, 3.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p[0] > 0.999_999);
        assert!(p[1] >= 0.0 && p.iter().all(|v| v.is_finite()));
        let s: f64 = p.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_logits_rejected() {
        assert!(softmax(&[f64::NAN, 0.0]).is_err());
        assert!(softmax(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn weighted_loss_matches_direct_formula() {
        let logits = [0.3, -1.2];
        let weights = [0.27, 1.0];
        let (loss, probs) = weighted_cross_entropy(&logits, 0, &weights).unwrap();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let direct = -(0.27) * (logits[0].exp() / z).ln();
        assert!((loss - direct).abs() < 1e-12);
        let s: f64 = probs.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_zero_grad_from_zero_upstream() {
        let p = LinearParams::zeros(2, 3);
        let (_, cache) = linear_forward(&p, &[1.0, 2.0, 3.0]).unwrap();
        let mut grads = LinearGrads::zeros_like(&p);
        let dx = linear_backward(&p, &cache, &[0.0, 0.0], &mut grads);
        assert!(dx.iter().all(|&v| v == 0.0));
        assert!(grads.weight.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_dim_mismatch() {
        let p = LinearParams::zeros(2, 3);
        assert!(linear_forward(&p, &[1.0]).is_err());
    }
}
