//! Dense row-major f64 tensors.
//!
//! Tensors are plain values: construct, read, share. Published operations
//! never mutate their inputs, so `&Tensor` is safe to share across threads.
//! Mutable access exists for the single writer that owns a parameter set
//! (the optimizer).

use alloc::vec;
use alloc::vec::Vec;

use crate::rng::Rng;
use crate::{err, Result};

/// Dense n-dimensional array of f64 in row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    /// Marks leaf tensors whose gradients the tape should accumulate.
    pub requires_grad: bool,
    /// Populated by gradient helpers; same length as `data` when present.
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(err!(Shape, "zero dimension in {shape:?}"));
        }
        if data.len() != expect {
            return Err(err!(
                Shape,
                "data length {} does not match shape {shape:?} ({} values)",
                data.len(),
                expect
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
            requires_grad: false,
            grad: None,
        }
    }

    /// I.i.d. normal entries with the given standard deviation.
    pub fn randn(shape: &[usize], std: f64, rng: &mut Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.normal() * std).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Single-writer mutable access (optimizer updates).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        debug_assert!(self.is_matrix());
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.cols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.shape.len() == 2 {
            Ok((self.shape[0], self.shape[1]))
        } else {
            Err(err!(Shape, "{what}: expected a matrix, got {:?}", self.shape))
        }
    }

    pub fn expect_shape(&self, shape: &[usize], what: &str) -> Result<()> {
        if self.shape == shape {
            Ok(())
        } else {
            Err(err!(Shape, "{what}: expected {shape:?}, got {:?}", self.shape))
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// True when every element is bit-identical (distinguishes -0.0 / NaN).
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn new_checks_length() {
        assert!(Tensor::new(&[2, 3], vec![0.0; 6]).is_ok());
        let e = Tensor::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(e, Error::Shape(_)));
    }

    #[test]
    fn zero_dim_rejected() {
        assert!(Tensor::new(&[2, 0], vec![]).is_err());
    }

    #[test]
    fn randn_deterministic() {
        let mut a = Rng::new(5);
        let mut b = Rng::new(5);
        let x = Tensor::randn(&[4, 4], 0.1, &mut a);
        let y = Tensor::randn(&[4, 4], 0.1, &mut b);
        assert!(x.bit_eq(&y));
    }

    #[test]
    fn bit_eq_sees_sign_of_zero() {
        let a = Tensor::new(&[1], vec![0.0]).unwrap();
        let b = Tensor::new(&[1], vec![-0.0]).unwrap();
        assert_eq!(a, b); // PartialEq: -0.0 == 0.0
        assert!(!a.bit_eq(&b));
    }
}
