//! Gated recurrent unit with the convention
//! h' = (1 - z) ⊙ h + z ⊙ h̃.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        let w = || Tensor::zeros(&[hidden_dim, input_dim]);
        let u = || Tensor::zeros(&[hidden_dim, hidden_dim]);
        let b = || Tensor::zeros(&[hidden_dim]);
        GruParams {
            input_dim,
            hidden_dim,
            w_z: w(),
            u_z: u(),
            b_z: b(),
            w_r: w(),
            u_r: u(),
            b_r: b(),
            w_h: w(),
            u_h: u(),
            b_h: b(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruGrads {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
}

impl GruGrads {
    pub fn zeros_like(p: &GruParams) -> Self {
        GruGrads {
            w_z: Tensor::zeros(p.w_z.shape()),
            u_z: Tensor::zeros(p.u_z.shape()),
            b_z: Tensor::zeros(p.b_z.shape()),
            w_r: Tensor::zeros(p.w_r.shape()),
            u_r: Tensor::zeros(p.u_r.shape()),
            b_r: Tensor::zeros(p.b_r.shape()),
            w_h: Tensor::zeros(p.w_h.shape()),
            u_h: Tensor::zeros(p.u_h.shape()),
            b_h: Tensor::zeros(p.b_h.shape()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GruCache {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub h_tilde: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// One step: returns h' and the cache needed for the backward pass.
pub fn gru_step(p: &GruParams, x: &[f64], h: &[f64]) -> Result<(Vec<f64>, GruCache)> {
    if x.len() != p.input_dim || h.len() != p.hidden_dim {
        return Err(Error::invalid(format!(
            "gru dims: x {} (want {}), h {} (want {})",
            x.len(),
            p.input_dim,
            h.len(),
            p.hidden_dim
        )));
    }
    let n = p.hidden_dim;
    let mut z = p.w_z.matvec(x);
    let uzh = p.u_z.matvec(h);
    let mut r = p.w_r.matvec(x);
    let urh = p.u_r.matvec(h);
    for i in 0..n {
        z[i] = sigmoid(z[i] + uzh[i] + p.b_z.data()[i]);
        r[i] = sigmoid(r[i] + urh[i] + p.b_r.data()[i]);
    }
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let mut h_tilde = p.w_h.matvec(x);
    let uhrh = p.u_h.matvec(&rh);
    for i in 0..n {
        h_tilde[i] = (h_tilde[i] + uhrh[i] + p.b_h.data()[i]).tanh();
    }
    let h_new: Vec<f64> = (0..n)
        .map(|i| (1.0 - z[i]) * h[i] + z[i] * h_tilde[i])
        .collect();
    let cache = GruCache { x: x.to_vec(), h: h.to_vec(), z, r, h_tilde };
    Ok((h_new, cache))
}

/// Backward through one step: returns (dx, dh_prev) and accumulates
/// parameter gradients.
pub fn gru_backward(
    p: &GruParams,
    cache: &GruCache,
    dh_new: &[f64],
    grads: &mut GruGrads,
) -> (Vec<f64>, Vec<f64>) {
    let n = p.hidden_dim;
    let GruCache { x, h, z, r, h_tilde } = cache;

    let mut dz = vec![0.0; n];
    let mut dht = vec![0.0; n];
    let mut dh = vec![0.0; n];
    for i in 0..n {
        dz[i] = dh_new[i] * (h_tilde[i] - h[i]);
        dht[i] = dh_new[i] * z[i];
        dh[i] = dh_new[i] * (1.0 - z[i]);
    }

    // Candidate pre-activation.
    let da_h: Vec<f64> = (0..n).map(|i| dht[i] * (1.0 - h_tilde[i] * h_tilde[i])).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    grads.w_h.add_outer(&da_h, x);
    grads.u_h.add_outer(&da_h, &rh);
    for (b, g) in grads.b_h.data_mut().iter_mut().zip(&da_h) {
        *b += g;
    }
    let drh = p.u_h.matvec_t(&da_h);
    let mut dr = vec![0.0; n];
    for i in 0..n {
        dr[i] = drh[i] * h[i];
        dh[i] += drh[i] * r[i];
    }

    // Gate pre-activations.
    let da_z: Vec<f64> = (0..n).map(|i| dz[i] * z[i] * (1.0 - z[i])).collect();
    let da_r: Vec<f64> = (0..n).map(|i| dr[i] * r[i] * (1.0 - r[i])).collect();
    grads.w_z.add_outer(&da_z, x);
    grads.u_z.add_outer(&da_z, h);
    grads.w_r.add_outer(&da_r, x);
    grads.u_r.add_outer(&da_r, h);
    for i in 0..n {
        grads.b_z.data_mut()[i] += da_z[i];
        grads.b_r.data_mut()[i] += da_r[i];
    }

    let mut dx = p.w_h.matvec_t(&da_h);
    for (a, b) in dx.iter_mut().zip(p.w_z.matvec_t(&da_z)) {
        *a += b;
    }
    for (a, b) in dx.iter_mut().zip(p.w_r.matvec_t(&da_r)) {
        *a += b;
    }
    for (a, b) in dh.iter_mut().zip(p.u_z.matvec_t(&da_z)) {
        *a += b;
    }
    for (a, b) in dh.iter_mut().zip(p.u_r.matvec_t(&da_r)) {
        *a += b;
    }
    (dx, dh)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_params_halve_hidden_state() {
        let p = GruParams::zeros(3, 4);
        let h = vec![1.0, -2.0, 0.5, 4.0];
        let (h2, _) = gru_step(&p, &[0.3, 0.1, -0.7], &h).unwrap();
        for (a, b) in h2.iter().zip(&h) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let p = GruParams::zeros(2, 3);
        let (h2, _) = gru_step(&p, &[0.0, 0.0], &[0.0; 3]).unwrap();
        assert!(h2.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let p = GruParams::zeros(2, 3);
        assert!(gru_step(&p, &[0.0], &[0.0; 3]).is_err());
        assert!(gru_step(&p, &[0.0, 0.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn matches_scalar_loop_reference() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let (nin, nh) = (3, 4);
        let mut p = GruParams::zeros(nin, nh);
        for t in [
            &mut p.w_z, &mut p.u_z, &mut p.b_z, &mut p.w_r, &mut p.u_r, &mut p.b_r, &mut p.w_h,
            &mut p.u_h, &mut p.b_h,
        ] {
            for v in t.data_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..nin).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..nh).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (got, _) = gru_step(&p, &x, &h).unwrap();

        // Independent scalar-loop evaluation of the same convention.
        let dot = |m: &Tensor, v: &[f64], i: usize| -> f64 {
            (0..v.len()).map(|j| m.data()[i * v.len() + j] * v[j]).sum()
        };
        for i in 0..nh {
            let z = sigmoid(dot(&p.w_z, &x, i) + dot(&p.u_z, &h, i) + p.b_z.data()[i]);
            let r = sigmoid(dot(&p.w_r, &x, i) + dot(&p.u_r, &h, i) + p.b_r.data()[i]);
            let rh: Vec<f64> = p
                .u_h
                .data()[i * nh..(i + 1) * nh]
                .iter()
                .enumerate()
                .map(|(j, w)| w * (h[j] * {
                    // r_j must use row j of the gate computation
                    sigmoid(dot(&p.w_r, &x, j) + dot(&p.u_r, &h, j) + p.b_r.data()[j])
                }))
                .collect();
            let pre = dot(&p.w_h, &x, i) + rh.iter().sum::<f64>() + p.b_h.data()[i];
            let ht = pre.tanh();
            let want = (1.0 - z) * h[i] + z * ht;
            assert!((got[i] - want).abs() < 1e-13, "component {i}: {} vs {want}", got[i]);
            let _ = r;
        }
    }
}
