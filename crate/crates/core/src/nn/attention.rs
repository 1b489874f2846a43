//! Object attention: scores = tanh(H w), alpha = softmax(scores), and a
//! per-object weighted output row alpha_i * H_i so downstream per-object
//! concatenation stays well-defined.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::linear::softmax;
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// [hidden]
    pub w: Tensor,
}

impl AttentionParams {
    pub fn zeros(hidden: usize) -> Self {
        AttentionParams { w: Tensor::zeros(&[hidden]) }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w: Tensor,
}

impl AttentionGrads {
    pub fn zeros_like(p: &AttentionParams) -> Self {
        AttentionGrads { w: Tensor::zeros(p.w.shape()) }
    }
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub rows: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
}

/// Returns (alpha, weighted rows, cache). Zero rows produce empty outputs.
pub fn attention(
    p: &AttentionParams,
    rows: &[Vec<f64>],
) -> Result<(Vec<f64>, Vec<Vec<f64>>, AttentionCache)> {
    if rows.is_empty() {
        return Ok((
            Vec::new(),
            Vec::new(),
            AttentionCache { rows: Vec::new(), scores: Vec::new(), alpha: Vec::new() },
        ));
    }
    let scores: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.iter()
                .zip(p.w.data())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                .tanh()
        })
        .collect();
    let alpha = softmax(&scores)?;
    let weighted: Vec<Vec<f64>> = rows
        .iter()
        .zip(&alpha)
        .map(|(r, &a)| r.iter().map(|v| a * v).collect())
        .collect();
    let cache = AttentionCache { rows: rows.to_vec(), scores, alpha: alpha.clone() };
    Ok((alpha, weighted, cache))
}

/// Backward from gradients on the weighted rows; returns dH rows and
/// accumulates dw.
pub fn attention_backward(
    p: &AttentionParams,
    cache: &AttentionCache,
    d_weighted: &[Vec<f64>],
    grads: &mut AttentionGrads,
) -> Vec<Vec<f64>> {
    let n = cache.rows.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d_rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut d_alpha = vec![0.0; n];
    for i in 0..n {
        d_alpha[i] = d_weighted[i]
            .iter()
            .zip(&cache.rows[i])
            .map(|(a, b)| a * b)
            .sum();
        d_rows.push(d_weighted[i].iter().map(|v| cache.alpha[i] * v).collect());
    }
    // Softmax backward.
    let dot: f64 = cache.alpha.iter().zip(&d_alpha).map(|(a, b)| a * b).sum();
    let d_scores: Vec<f64> = (0..n)
        .map(|i| cache.alpha[i] * (d_alpha[i] - dot))
        .collect();
    // tanh backward, then fan out to w and the rows.
    for i in 0..n {
        let ds = d_scores[i] * (1.0 - cache.scores[i] * cache.scores[i]);
        for (g, r) in grads.w.data_mut().iter_mut().zip(&cache.rows[i]) {
            *g += ds * r;
        }
        for (dr, w) in d_rows[i].iter_mut().zip(p.w.data()) {
            *dr += ds * w;
        }
    }
    d_rows
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_object_gets_full_weight() {
        let p = AttentionParams::zeros(3);
        let rows = vec![vec![0.5, -1.0, 2.0]];
        let (alpha, weighted, _) = attention(&p, &rows).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(weighted, rows);
    }

    #[test]
    fn identical_rows_split_evenly() {
        let mut p = AttentionParams::zeros(2);
        p.w.data_mut().copy_from_slice(&[0.4, -0.6]);
        let rows = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let (alpha, _, _) = attention(&p, &rows).unwrap();
        assert_eq!(alpha, vec![0.5, 0.5]);
    }

    #[test]
    fn empty_input_empty_output() {
        let p = AttentionParams::zeros(2);
        let (alpha, weighted, _) = attention(&p, &[]).unwrap();
        assert!(alpha.is_empty() && weighted.is_empty());
    }

    #[test]
    fn alpha_matches_exp_normalize_and_sums_to_one() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut p = AttentionParams::zeros(4);
        for v in p.w.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let (alpha, _, _) = attention(&p, &rows).unwrap();
        let scores: Vec<f64> = rows
            .iter()
            .map(|r| r.iter().zip(p.w.data()).map(|(a, b)| a * b).sum::<f64>().tanh())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for (a, s) in alpha.iter().zip(&scores) {
            assert!((a - s.exp() / z).abs() < 1e-12);
        }
        let sum: f64 = alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_equivariance() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut p = AttentionParams::zeros(3);
        for v in p.w.data_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let (alpha, weighted, _) = attention(&p, &rows).unwrap();
        let perm = [2usize, 0, 3, 1];
        let rows_p: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let (alpha_p, weighted_p, _) = attention(&p, &rows_p).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert!((alpha_p[j] - alpha[i]).abs() < 1e-15);
            assert_eq!(weighted_p[j], weighted[i]);
        }
    }
}
