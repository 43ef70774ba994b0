use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Non-overlapping max pooling along the last axis (stride = window).
/// Trailing samples that do not fill a whole window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool1d {
    pub pool: usize,
}

/// Winning input positions from a forward pass, consumed by the backward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolRecord {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    /// Flat input index of each output element's maximum.
    argmax: Vec<usize>,
}

impl PoolRecord {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

impl MaxPool1d {
    pub fn new(pool: usize) -> Result<Self> {
        if pool == 0 {
            return Err(Error::contract("pool window must be positive"));
        }
        Ok(Self { pool })
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        if input_len < self.pool {
            return Err(Error::shape(format!(
                "input length {input_len} is shorter than pool window {}",
                self.pool
            )));
        }
        Ok(input_len / self.pool)
    }

    /// Pools the last axis of `input` (any rank >= 1).
    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, PoolRecord)> {
        let shape = input.shape();
        let len = *shape.last().expect("tensors have rank >= 1");
        let out_len = self.output_len(len)?;
        let rows = input.len() / len;
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        for (r, row) in input.data().chunks_exact(len).enumerate() {
            for j in 0..out_len {
                let start = j * self.pool;
                let mut best = start;
                for i in start + 1..start + self.pool {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut out_shape = shape.to_vec();
        *out_shape.last_mut().unwrap() = out_len;
        let record = PoolRecord {
            input_shape: shape.to_vec(),
            output_shape: out_shape.clone(),
            argmax,
        };
        Ok((Tensor::from_vec(&out_shape, out)?, record))
    }

    /// Routes each upstream gradient to the input position that won its window.
    pub fn backward(record: &PoolRecord, d_output: &Tensor) -> Result<Tensor> {
        if d_output.shape() != record.output_shape.as_slice() {
            return Err(Error::shape(format!(
                "pool d_output shape {:?} does not match recorded output {:?}",
                d_output.shape(),
                record.output_shape
            )));
        }
        let mut d_input = Tensor::zeros(&record.input_shape)?;
        let di = d_input.data_mut();
        for (&idx, &g) in record.argmax.iter().zip(d_output.data()) {
            di[idx] += g;
        }
        Ok(d_input)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::fd;
    use proptest::prelude::*;

    #[test]
    fn hand_example_forward_and_backward() {
        let pool = MaxPool1d::new(3).unwrap();
        let x = Tensor::from_vec(&[1, 6], vec![1.0, 5.0, 2.0, 4.0, 3.0, 9.0]).unwrap();
        let (y, rec) = pool.forward(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 9.0]);
        let dx = MaxPool1d::backward(&rec, &Tensor::new(&[1, 2], 1.0).unwrap()).unwrap();
        assert_eq!(dx.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let dz = MaxPool1d::backward(&rec, &Tensor::zeros(&[1, 2]).unwrap()).unwrap();
        assert!(dz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn default_window_length() {
        let pool = MaxPool1d::new(3).unwrap();
        let (y, _) = pool.forward(&Tensor::zeros(&[2, 596]).unwrap()).unwrap();
        assert_eq!(y.shape(), &[2, 198]);
    }

    #[test]
    fn constant_input_and_tie_break() {
        let pool = MaxPool1d::new(3).unwrap();
        let (y, rec) = pool.forward(&Tensor::new(&[1, 7], 2.5).unwrap()).unwrap();
        assert_eq!(y.data(), &[2.5, 2.5]);
        assert_eq!(rec.argmax(), &[0, 3]);
    }

    #[test]
    fn errors() {
        let pool = MaxPool1d::new(3).unwrap();
        assert!(matches!(
            pool.forward(&Tensor::zeros(&[1, 2]).unwrap()),
            Err(Error::Shape(_))
        ));
        let (_, rec) = pool.forward(&Tensor::zeros(&[1, 6]).unwrap()).unwrap();
        assert!(matches!(
            MaxPool1d::backward(&rec, &Tensor::zeros(&[1, 3]).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(MaxPool1d::new(0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences_without_ties() {
        let pool = MaxPool1d::new(3).unwrap();
        let x = fd::random(&[2, 10], 5);
        let r = fd::random(&[2, 3], 6);
        let (_, rec) = pool.forward(&x).unwrap();
        let dx = MaxPool1d::backward(&rec, &r).unwrap();
        let num = fd::numeric_grad(&x, |xx| fd::dot(&pool.forward(xx).unwrap().0, &r));
        fd::assert_close(&dx, &num, 1e-5, 1e-7);
    }

    proptest! {
        #[test]
        fn output_length_is_floor(len in 1usize..200, p in 1usize..9) {
            let pool = MaxPool1d::new(p).unwrap();
            match pool.forward(&Tensor::zeros(&[1, len]).unwrap()) {
                Ok((y, _)) => prop_assert_eq!(y.shape()[1], len / p),
                Err(_) => prop_assert!(len < p),
            }
        }
    }
}
