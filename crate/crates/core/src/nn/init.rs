//! Seeded parameter initialization: uniform ±1/sqrt(fan_in) for dense
//! weights and control matrices, near-orthogonal recurrent matrices via
//! Gram-Schmidt on a seeded Gaussian.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::attention::AttentionParams;
use crate::nn::gru::GruParams;
use crate::nn::linear::LinearParams;
use crate::nn::spline::SplineKernel;
use crate::nn::tensor::Tensor;

pub fn uniform_fan_in(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Tensor {
    let bound = 1.0 / (in_dim as f64).sqrt();
    let mut t = Tensor::zeros(&[out_dim, in_dim]);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    t
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Square matrix with orthonormal rows, from QR of a seeded Gaussian
/// (classical Gram-Schmidt; adequate at these sizes).
pub fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| gaussian(rng)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            let rj = rows[j].clone();
            for (a, b) in rows[i].iter_mut().zip(&rj) {
                *a -= dot * b;
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        for v in &mut rows[i] {
            *v /= norm;
        }
    }
    Tensor::from_vec(&[n, n], rows.concat()).unwrap()
}

pub fn seeded_linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> LinearParams {
    LinearParams {
        weight: uniform_fan_in(rng, out_dim, in_dim),
        bias: Tensor::zeros(&[out_dim]),
    }
}

pub fn seeded_gru(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize) -> GruParams {
    let mut p = GruParams::zeros(input_dim, hidden_dim);
    p.w_z = uniform_fan_in(rng, hidden_dim, input_dim);
    p.w_r = uniform_fan_in(rng, hidden_dim, input_dim);
    p.w_h = uniform_fan_in(rng, hidden_dim, input_dim);
    p.u_z = orthogonal(rng, hidden_dim);
    p.u_r = orthogonal(rng, hidden_dim);
    p.u_h = orthogonal(rng, hidden_dim);
    p
}

pub fn seeded_attention(rng: &mut ChaCha8Rng, hidden: usize) -> AttentionParams {
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut p = AttentionParams::zeros(hidden);
    for v in p.w.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    p
}

pub fn seeded_kernel(rng: &mut ChaCha8Rng, grid: usize, in_dim: usize, out_dim: usize) -> SplineKernel {
    let mut k = SplineKernel::zeros(grid, in_dim, out_dim).unwrap();
    for c in &mut k.control {
        *c = uniform_fan_in(rng, out_dim, in_dim);
    }
    k.self_weight = uniform_fan_in(rng, out_dim, in_dim);
    k
}
