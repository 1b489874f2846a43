//! Minimal dense tensor: a shape and row-major f64 storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                name: "tensor".into(),
                expected: shape.to_vec(),
                found: vec![data.len()],
            });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows of a 2-D tensor laid out [out, in].
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// y = W x for W of shape [out, in].
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.shape.len(), 2);
        debug_assert_eq!(self.cols(), x.len());
        let (r, c) = (self.rows(), self.cols());
        let mut y = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            y[i] = acc;
        }
        y
    }

    /// y = Wᵀ g for W of shape [out, in]; the input-gradient half of a
    /// matvec backward pass.
    pub fn matvec_t(&self, g: &[f64]) -> Vec<f64> {
        debug_assert_eq!(self.shape.len(), 2);
        debug_assert_eq!(self.rows(), g.len());
        let (r, c) = (self.rows(), self.cols());
        let mut y = vec![0.0; c];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let gi = g[i];
            for (out, w) in y.iter_mut().zip(row) {
                *out += w * gi;
            }
        }
        y
    }

    /// self[i, j] += g[i] * x[j]; the weight-gradient half of a matvec
    /// backward pass.
    pub fn add_outer(&mut self, g: &[f64], x: &[f64]) {
        debug_assert_eq!(self.shape.len(), 2);
        debug_assert_eq!(self.rows(), g.len());
        debug_assert_eq!(self.cols(), x.len());
        let c = self.cols();
        for (i, gi) in g.iter().enumerate() {
            let row = &mut self.data[i * c..(i + 1) * c];
            for (w, v) in row.iter_mut().zip(x) {
                *w += gi * v;
            }
        }
    }

    pub fn add_scaled(&mut self, other: &Tensor, k: f64) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }
}
