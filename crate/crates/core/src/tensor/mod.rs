//! Dense numerics: shaped `f64` arrays, small square matrices with LU
//! factorization, a seeded generator, finite-difference oracles and the
//! `FLT1` binary container.

mod container;
mod finite_diff;
mod linalg;
mod rng;

pub use container::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, TENSOR_MAGIC};
pub use finite_diff::{finite_diff_gradient, finite_diff_hessian_diag, finite_diff_jacobian, DEFAULT_FD_EPS};
pub use linalg::{SquareMatrix, SINGULAR_PIVOT_TOL};
pub use rng::RngState;

use crate::error::{shape_mismatch, Error, Result};

/// Row-major array of `f64` values with an explicit shape.
///
/// Batched data uses the leading extent as the example axis: `N×H×W×C` for
/// images, `N×D` for flat vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{shape:?} ({expected} values)"),
                got: format!("{} values", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    /// Stack equally sized examples into an `N×rest` tensor.
    pub fn from_examples(rest: &[usize], rows: &[Vec<f64>]) -> Result<Self> {
        let per: usize = rest.iter().product();
        let mut data = Vec::with_capacity(per * rows.len());
        for row in rows {
            if row.len() != per {
                return Err(shape_mismatch(rest, row.len()));
            }
            data.extend_from_slice(row);
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(rest);
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of examples along the leading axis.
    pub fn n_examples(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Number of values per example.
    pub fn example_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn example(&self, i: usize) -> &[f64] {
        let k = self.example_len();
        &self.data[i * k..(i + 1) * k]
    }

    pub fn example_mut(&mut self, i: usize) -> &mut [f64] {
        let k = self.example_len();
        &mut self.data[i * k..(i + 1) * k]
    }

    pub fn examples(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        let k = self.example_len().max(1);
        self.data.chunks(k)
    }

    /// Copy a subset of examples, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let k = self.example_len();
        let mut data = Vec::with_capacity(k * indices.len());
        for &i in indices {
            data.extend_from_slice(self.example(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Self { shape, data }
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(shape_mismatch(shape, self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
