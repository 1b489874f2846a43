//! Edge-conditioned spline convolution.
//!
//! The kernel holds a k x k lattice of control matrices over the edge
//! feature domain [0,1]²; the weight matrix applied along an edge is the
//! degree-1 (bilinear) B-spline interpolation of the four surrounding
//! control matrices. A node update is
//! `f'_i = W_c f_i + sum over in-edges (src -> i) of W(e) f_src`,
//! optionally plus the input when in/out dims match (residual form).
//! `SplineLut` freezes W(e) at quantized bin centers for constant-time
//! deployment lookups.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Counts basis queries that fell outside [0,1]² and were clamped.
static CLAMP_EVENTS: AtomicU64 = AtomicU64::new(0);

pub fn basis_clamp_count() -> u64 {
    CLAMP_EVENTS.load(Ordering::Relaxed)
}

pub fn reset_basis_clamp_count() {
    CLAMP_EVENTS.store(0, Ordering::Relaxed);
}

/// One edge as seen by the convolution: feature flows src -> dst.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvEdge {
    pub src: u32,
    pub dst: u32,
    pub feat: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineKernel {
    /// Control points per dimension (k >= 2).
    pub grid: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    /// k*k control matrices [out, in], row-major over (gy, gx).
    pub control: Vec<Tensor>,
    /// Self-connection matrix W_c, [out, in].
    pub self_weight: Tensor,
}

impl SplineKernel {
    pub fn zeros(grid: usize, in_dim: usize, out_dim: usize) -> Result<Self> {
        if grid < 2 {
            return Err(Error::invalid("spline grid must be at least 2"));
        }
        Ok(SplineKernel {
            grid,
            in_dim,
            out_dim,
            control: (0..grid * grid).map(|_| Tensor::zeros(&[out_dim, in_dim])).collect(),
            self_weight: Tensor::zeros(&[out_dim, in_dim]),
        })
    }

    /// Interpolated weight matrix at an edge feature.
    pub fn weight_at(&self, e: [f64; 2]) -> Tensor {
        let mut w = Tensor::zeros(&[self.out_dim, self.in_dim]);
        for b in spline_basis(self.grid, e) {
            w.add_scaled(&self.control[b.idx], b.w);
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisWeight {
    /// Index into the k*k control lattice.
    pub idx: usize,
    pub w: f64,
}

/// Bilinear basis over the control lattice: four non-negative weights
/// summing to one. Out-of-range inputs are clamped and counted.
pub fn spline_basis(grid: usize, e: [f64; 2]) -> [BasisWeight; 4] {
    let mut ex = e[0];
    let mut ey = e[1];
    if !(0.0..=1.0).contains(&ex) || !(0.0..=1.0).contains(&ey) {
        CLAMP_EVENTS.fetch_add(1, Ordering::Relaxed);
        ex = ex.clamp(0.0, 1.0);
        ey = ey.clamp(0.0, 1.0);
    }
    let k = grid;
    let ux = ex * (k - 1) as f64;
    let uy = ey * (k - 1) as f64;
    let ix = (ux.floor() as usize).min(k - 2);
    let iy = (uy.floor() as usize).min(k - 2);
    let dx = ux - ix as f64;
    let dy = uy - iy as f64;
    let at = |gx: usize, gy: usize| gy * k + gx;
    [
        BasisWeight { idx: at(ix, iy), w: (1.0 - dx) * (1.0 - dy) },
        BasisWeight { idx: at(ix + 1, iy), w: dx * (1.0 - dy) },
        BasisWeight { idx: at(ix, iy + 1), w: (1.0 - dx) * dy },
        BasisWeight { idx: at(ix + 1, iy + 1), w: dx * dy },
    ]
}

#[derive(Debug, Clone)]
pub struct SplineConvCache {
    pub inputs: Vec<Vec<f64>>,
    pub residual: bool,
}

fn check_dims(kernel: &SplineKernel, inputs: &[Vec<f64>], residual: bool) -> Result<()> {
    if residual && kernel.in_dim != kernel.out_dim {
        return Err(Error::invalid("residual spline layer needs in_dim == out_dim"));
    }
    for (i, f) in inputs.iter().enumerate() {
        if f.len() != kernel.in_dim {
            return Err(Error::invalid(format!(
                "node {i} feature dim {} != kernel in_dim {}",
                f.len(),
                kernel.in_dim
            )));
        }
    }
    Ok(())
}

/// Exact forward pass over all nodes.
pub fn spline_conv_forward(
    kernel: &SplineKernel,
    inputs: &[Vec<f64>],
    edges: &[ConvEdge],
    residual: bool,
) -> Result<(Vec<Vec<f64>>, SplineConvCache)> {
    check_dims(kernel, inputs, residual)?;
    let mut out: Vec<Vec<f64>> = inputs.iter().map(|f| kernel.self_weight.matvec(f)).collect();
    for e in edges {
        let w = kernel.weight_at(e.feat);
        let msg = w.matvec(&inputs[e.src as usize]);
        for (o, m) in out[e.dst as usize].iter_mut().zip(&msg) {
            *o += m;
        }
    }
    if residual {
        for (o, f) in out.iter_mut().zip(inputs) {
            for (a, b) in o.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    Ok((out, SplineConvCache { inputs: inputs.to_vec(), residual }))
}

#[derive(Debug, Clone)]
pub struct SplineKernelGrads {
    pub control: Vec<Tensor>,
    pub self_weight: Tensor,
}

impl SplineKernelGrads {
    pub fn zeros_like(k: &SplineKernel) -> Self {
        SplineKernelGrads {
            control: k.control.iter().map(|c| Tensor::zeros(c.shape())).collect(),
            self_weight: Tensor::zeros(k.self_weight.shape()),
        }
    }
}

/// Backward pass; returns input gradients and accumulates kernel grads.
pub fn spline_conv_backward(
    kernel: &SplineKernel,
    cache: &SplineConvCache,
    edges: &[ConvEdge],
    d_out: &[Vec<f64>],
    grads: &mut SplineKernelGrads,
) -> Vec<Vec<f64>> {
    let mut d_in: Vec<Vec<f64>> = cache
        .inputs
        .iter()
        .map(|f| vec![0.0; f.len()])
        .collect();
    for (v, f) in cache.inputs.iter().enumerate() {
        grads.self_weight.add_outer(&d_out[v], f);
        let dx = kernel.self_weight.matvec_t(&d_out[v]);
        for (a, b) in d_in[v].iter_mut().zip(&dx) {
            *a += b;
        }
    }
    for e in edges {
        let basis = spline_basis(kernel.grid, e.feat);
        let f_src = &cache.inputs[e.src as usize];
        let g = &d_out[e.dst as usize];
        for b in basis {
            // dK_b += basis * g (outer) f_src
            let c = &mut grads.control[b.idx];
            let cols = f_src.len();
            for (i, gi) in g.iter().enumerate() {
                let row = &mut c.data_mut()[i * cols..(i + 1) * cols];
                let s = b.w * gi;
                for (w, v) in row.iter_mut().zip(f_src) {
                    *w += s * v;
                }
            }
        }
        let w = kernel.weight_at(e.feat);
        let dsrc = w.matvec_t(g);
        for (a, b) in d_in[e.src as usize].iter_mut().zip(&dsrc) {
            *a += b;
        }
    }
    if cache.residual {
        for (di, g) in d_in.iter_mut().zip(d_out) {
            for (a, b) in di.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    d_in
}

/// Kernel matrices frozen at the centers of a B x B grid of edge-feature
/// bins; lookups use the nearest bin.
#[derive(Debug, Clone)]
pub struct SplineLut {
    pub bins: usize,
    pub matrices: Vec<Tensor>,
}

pub fn build_lut(kernel: &SplineKernel, bins: usize) -> Result<SplineLut> {
    if bins < 2 {
        return Err(Error::invalid("lut needs at least 2 bins per dim"));
    }
    let mut matrices = Vec::with_capacity(bins * bins);
    for by in 0..bins {
        for bx in 0..bins {
            let center = [
                (bx as f64 + 0.5) / bins as f64,
                (by as f64 + 0.5) / bins as f64,
            ];
            matrices.push(kernel.weight_at(center));
        }
    }
    Ok(SplineLut { bins, matrices })
}

impl SplineLut {
    pub fn lookup(&self, e: [f64; 2]) -> &Tensor {
        let b = self.bins;
        let bx = ((e[0].clamp(0.0, 1.0) * b as f64) as usize).min(b - 1);
        let by = ((e[1].clamp(0.0, 1.0) * b as f64) as usize).min(b - 1);
        &self.matrices[by * b + bx]
    }
}

/// Forward pass using nearest-bin kernel matrices in place of exact
/// spline interpolation; W_c and the residual path are unchanged.
pub fn lut_forward(
    kernel: &SplineKernel,
    lut: &SplineLut,
    inputs: &[Vec<f64>],
    edges: &[ConvEdge],
    residual: bool,
) -> Result<Vec<Vec<f64>>> {
    check_dims(kernel, inputs, residual)?;
    let mut out: Vec<Vec<f64>> = inputs.iter().map(|f| kernel.self_weight.matvec(f)).collect();
    for e in edges {
        let msg = lut.lookup(e.feat).matvec(&inputs[e.src as usize]);
        for (o, m) in out[e.dst as usize].iter_mut().zip(&msg) {
            *o += m;
        }
    }
    if residual {
        for (o, f) in out.iter_mut().zip(inputs) {
            for (a, b) in o.iter_mut().zip(f) {
                *a += b;
            }
        }
    }
    Ok(out)
}

/// Largest gradient norm of the piecewise-bilinear interpolant over the
/// lattice, from adjacent control-point differences: any kernel entry
/// moves at most `lipschitz * |e - e'|` between two edge features.
pub fn kernel_lipschitz(kernel: &SplineKernel) -> f64 {
    let k = kernel.grid;
    let n = kernel.in_dim * kernel.out_dim;
    let mut max_dx: f64 = 0.0;
    let mut max_dy: f64 = 0.0;
    for gy in 0..k {
        for gx in 0..k {
            let here = kernel.control[gy * k + gx].data();
            if gx + 1 < k {
                let right = kernel.control[gy * k + gx + 1].data();
                for i in 0..n {
                    max_dx = max_dx.max((right[i] - here[i]).abs());
                }
            }
            if gy + 1 < k {
                let up = kernel.control[(gy + 1) * k + gx].data();
                for i in 0..n {
                    max_dy = max_dy.max((up[i] - here[i]).abs());
                }
            }
        }
    }
    let s = (k - 1) as f64;
    ((s * max_dx).powi(2) + (s * max_dy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_edges() -> Vec<ConvEdge> {
        vec![
            ConvEdge { src: 0, dst: 1, feat: [0.3, 0.8] },
            ConvEdge { src: 1, dst: 2, feat: [0.6, 0.1] },
            ConvEdge { src: 0, dst: 2, feat: [0.9, 0.9] },
        ]
    }

    #[test]
    fn basis_is_partition_of_unity() {
        for k in 2..6 {
            for i in 0..40 {
                let e = [i as f64 / 39.0, (39 - i) as f64 / 39.0];
                let b = spline_basis(k, e);
                let sum: f64 = b.iter().map(|x| x.w).sum();
                assert!((sum - 1.0).abs() < 1e-12);
                assert!(b.iter().all(|x| x.w >= 0.0));
            }
        }
    }

    #[test]
    fn basis_at_lattice_point_is_one() {
        let b = spline_basis(3, [0.5, 1.0]);
        let nonzero: Vec<_> = b.iter().filter(|x| x.w > 0.0).collect();
        assert_eq!(nonzero.len(), 1);
        assert!((nonzero[0].w - 1.0).abs() < 1e-15);
        assert_eq!(nonzero[0].idx, 2 * 3 + 1);
    }

    #[test]
    fn basis_at_cell_center_is_quarter() {
        let b = spline_basis(2, [0.5, 0.5]);
        for x in b {
            assert!((x.w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn basis_clamps_and_counts() {
        reset_basis_clamp_count();
        let _ = spline_basis(3, [-0.2, 0.5]);
        let _ = spline_basis(3, [1.5, 2.0]);
        let _ = spline_basis(3, [0.4, 0.4]);
        assert_eq!(basis_clamp_count(), 2);
        let b = spline_basis(3, [-0.2, 0.5]);
        let sum: f64 = b.iter().map(|x| x.w).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_in_neighbors_identity_self_weight() {
        let mut kernel = SplineKernel::zeros(3, 2, 2).unwrap();
        for i in 0..2 {
            kernel.self_weight.data_mut()[i * 2 + i] = 1.0;
        }
        let inputs = vec![vec![0.7, -0.3]];
        let (out, _) = spline_conv_forward(&kernel, &inputs, &[], false).unwrap();
        assert_eq!(out[0], inputs[0]);
    }

    #[test]
    fn zero_control_reduces_to_self_weight() {
        let mut kernel = SplineKernel::zeros(3, 2, 2).unwrap();
        kernel.self_weight = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let inputs = vec![vec![1.0, 1.0], vec![2.0, -1.0], vec![0.5, 0.5]];
        let (out, _) = spline_conv_forward(&kernel, &inputs, &line_edges(), false).unwrap();
        for (o, f) in out.iter().zip(&inputs) {
            assert_eq!(*o, kernel.self_weight.matvec(f));
        }
    }

    #[test]
    fn zero_initialized_residual_layer_is_identity() {
        let kernel = SplineKernel::zeros(3, 2, 2).unwrap();
        let inputs = vec![vec![1.0, -2.0], vec![0.25, 4.0], vec![-0.5, 0.0]];
        let (out, _) = spline_conv_forward(&kernel, &inputs, &line_edges(), true).unwrap();
        assert_eq!(out, inputs);
    }

    #[test]
    fn dim_mismatch_rejected() {
        let kernel = SplineKernel::zeros(3, 2, 2).unwrap();
        let inputs = vec![vec![1.0, 2.0, 3.0]];
        assert!(spline_conv_forward(&kernel, &inputs, &[], false).is_err());
    }

    #[test]
    fn lut_exact_at_bin_center() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let kernel = crate::nn::init::seeded_kernel(&mut rng, 3, 2, 2);
        let lut = build_lut(&kernel, 8).unwrap();
        let inputs = vec![vec![0.5, -1.0], vec![2.0, 0.1]];
        // Edge feature exactly at the (3, 5) bin center.
        let e = [(3.0 + 0.5) / 8.0, (5.0 + 0.5) / 8.0];
        let edges = vec![ConvEdge { src: 0, dst: 1, feat: e }];
        let exact = spline_conv_forward(&kernel, &inputs, &edges, false).unwrap().0;
        let approx = lut_forward(&kernel, &lut, &inputs, &edges, false).unwrap();
        for (a, b) in exact.iter().zip(&approx) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
