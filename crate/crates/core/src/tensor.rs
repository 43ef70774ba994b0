//! Dense row-major `f64` tensor with explicit shape.
//!
//! The element at multi-index `[i0, i1, ..., in]` lives at the usual row-major
//! flat offset, so a `C x L` signal stores `[c, t]` at `c * L + t`.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Elementwise binary operation for [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::shape(
            "tensor shape must have at least one dimension",
        ));
    }
    if let Some(d) = shape.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!(
            "dimension {d} of shape {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Tensor of the given shape with every element equal to `fill`.
    pub fn new(shape: &[usize], fill: f64) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![fill; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, 0.0)
    }

    /// Wraps existing row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n = check_shape(shape)?;
        if data.len() != n {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(new_shape)
    }

    /// Consuming reshape; never copies the data.
    pub fn into_reshape(mut self, new_shape: &[usize]) -> Result<Self> {
        let n = check_shape(new_shape)?;
        if n != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) into {new_shape:?} ({n} elements)",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = new_shape.to_vec();
        Ok(self)
    }

    pub fn elementwise(&self, other: &Tensor, op: BinaryOp) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise {op:?} on mismatched shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let f: fn(f64, f64) -> f64 = match op {
            BinaryOp::Add => |a, b| a + b,
            BinaryOp::Sub => |a, b| a - b,
            BinaryOp::Mul => |a, b| a * b,
        };
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, BinaryOp::Mul)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Index of the largest element; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    /// Contiguous slice of row `i` of a tensor viewed as `[shape[0], rest]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.len() / self.shape[0];
        &self.data[i * w..(i + 1) * w]
    }
}

/// Index of the largest value; ties break to the lowest index. NaN never wins.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?} ...", &self.data[..SHOW])
        }
    }
}
