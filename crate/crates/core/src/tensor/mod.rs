//! Dense `f64` tensors with a tape-based reverse-mode autodiff engine.
//!
//! A [`Tensor`] is a plain row-major array with an optional gradient slot.
//! Differentiable computations are recorded on a [`Tape`] and replayed in
//! reverse by [`Tape::backward`]; [`Sgd`] consumes the resulting gradients.

mod kernels;
mod optim;
mod tape;

pub use optim::{NamedTensor, Sgd};
pub use tape::{Tape, Var};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use kernels::gemm;

/// Element-wise activation functions used by the model families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Linear => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    #[inline]
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Linear => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    grad: Option<Vec<f64>>,
    #[serde(skip)]
    requires_grad: bool,
}

impl Tensor {
    /// Builds a tensor from row-major data. Every value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::check_shape(&shape, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericInstability { op: "tensor" });
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Builds an additive mask tensor: entries are `0.0` (keep) or `-inf` (block).
    pub fn mask(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::check_shape(&shape, data.len())?;
        if data.iter().any(|&v| !(v == 0.0 || v == f64::NEG_INFINITY)) {
            return Err(Error::InvalidArgument(
                "mask entries must be 0 or -inf".into(),
            ));
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Like [`Tensor::new`] but also admits `-inf` entries (masked scores).
    pub fn with_neg_inf(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::check_shape(&shape, data.len())?;
        if data.iter().any(|&v| v.is_nan() || v == f64::INFINITY) {
            return Err(Error::NumericInstability { op: "tensor" });
        }
        Ok(Self::from_parts(shape, data))
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    fn check_shape(shape: &[usize], len: usize) -> Result<()> {
        if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != len {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                len,
            });
        }
        Ok(())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![0.0; n])
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds a 2-D tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Self::new(vec![m, n], rows.concat())
    }

    pub fn requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn set_requires_grad(&mut self, flag: bool) {
        self.requires_grad = flag;
    }

    pub fn is_requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "set_grad",
                left: self.shape.clone(),
                right: vec![grad.len()],
            });
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub(crate) fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    /// Same data viewed with a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape.clone(),
                right: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    /// Element at a 2-D index.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[self.shape.len() - 1] + j]
    }

    /// Row count and column count when viewing the tensor as a matrix whose
    /// columns are the last axis.
    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        let cols = *self.shape.last().expect("non-empty shape");
        (self.data.len() / cols, cols)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Matrix product of two 2-D tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims(a, b)?;
    let mut out = vec![0.0; m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n, false, false);
    Ok(Tensor::from_parts(vec![m, n], out))
}

pub(crate) fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    Ok((a.shape[0], a.shape[1], b.shape[1]))
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    Tensor::from_parts(
        x.shape.clone(),
        x.data.iter().map(|&v| kind.apply(v)).collect(),
    )
}

/// Softmax over the last axis. `-inf` inputs map to exactly zero weight;
/// a row made only of `-inf` is rejected.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, cols) = x.rows_cols();
    let mut out = x.data.clone();
    for row in out.chunks_mut(cols) {
        softmax_in_place(row)?;
    }
    Ok(Tensor::from_parts(x.shape.clone(), out))
}

pub(crate) fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericInstability { op: "softmax" });
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) -> Result<()> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NumericInstability { op: "log_softmax" });
    }
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for v in row.iter_mut() {
        *v -= lse;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_and_values() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::mask(vec![2], vec![0.0, f64::NEG_INFINITY]).is_ok());
        assert!(Tensor::mask(vec![2], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn matmul_hand_values() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![5.0], vec![6.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let b = Tensor::from_rows(&[vec![0.3, -1.7], vec![2.5, 9.0]]).unwrap();
        assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
        let x = Tensor::full(&[4, 2], 1.25);
        let z = matmul(&Tensor::zeros(&[3, 4]), &x).unwrap();
        assert_eq!(z, Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-1.5), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Linear.apply(-3.25), -3.25);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        let big = Activation::Sigmoid.apply(800.0);
        assert!(big <= 1.0 && big.is_finite());
        assert!(Activation::Sigmoid.apply(-800.0) >= 0.0);
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::from_rows(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]]).unwrap();
        let s = softmax_rows(&t).unwrap();
        for v in &s.data()[..3] {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let expected = [0.09003057317038046, 0.24472847105479767, 0.6652409557748219];
        for (v, e) in s.data()[3..].iter().zip(expected) {
            assert!((v - e).abs() < 1e-12);
        }
        let masked = Tensor::with_neg_inf(vec![1, 2], vec![f64::NEG_INFINITY, 0.0]).unwrap();
        assert_eq!(softmax_rows(&masked).unwrap().data(), &[0.0, 1.0]);
        let all_masked =
            Tensor::with_neg_inf(vec![1, 2], vec![f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap();
        assert!(softmax_rows(&all_masked).is_err());
    }
}
