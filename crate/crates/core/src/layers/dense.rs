use crate::error::{Error, Result};
use crate::gemm::{gemm, View, ViewMut};
use crate::tensor::Tensor;

use super::{LayerGradients, ParamGradients};

/// Fully-connected layer `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 2 {
            return Err(Error::shape(format!(
                "dense weights must be rank 2, got {s:?}"
            )));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::shape(format!(
                "dense bias shape {:?} does not match {} outputs",
                bias.shape(),
                s[0]
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[n_out, n_in])?, Tensor::zeros(&[n_out])?)
    }

    pub fn n_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let x = input.reshape(&[1, input.len()])?;
        if input.shape().len() != 1 {
            return Err(Error::shape(format!(
                "dense input must be a vector, got {:?}",
                input.shape()
            )));
        }
        let y = self.forward_batch(&x)?;
        y.into_reshape(&[self.n_out()])
    }

    /// `[B, N_in] -> [B, N_out]`
    pub fn forward_batch(&self, input: &Tensor) -> Result<Tensor> {
        let batch = self.check_batch(input)?;
        let n_out = self.n_out();
        let mut out = Tensor::zeros(&[batch, n_out])?;
        for row in out.data_mut().chunks_exact_mut(n_out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            View::dense(input.data(), batch, self.n_in()),
            View::dense(self.weights.data(), n_out, self.n_in()).t(),
            1.0,
            ViewMut::dense(out.data_mut(), batch, n_out),
        );
        Ok(out)
    }

    fn check_batch(&self, input: &Tensor) -> Result<usize> {
        let s = input.shape();
        if s.len() != 2 || s[1] != self.n_in() {
            return Err(Error::shape(format!(
                "dense expects [B, {}], got {s:?}",
                self.n_in()
            )));
        }
        Ok(s[0])
    }

    pub fn backward(&self, input: &Tensor, d_output: &Tensor) -> Result<LayerGradients> {
        if input.shape() != [self.n_in()] || d_output.shape() != [self.n_out()] {
            return Err(Error::shape(format!(
                "dense backward expects input [{}] and d_output [{}], got {:?} and {:?}",
                self.n_in(),
                self.n_out(),
                input.shape(),
                d_output.shape()
            )));
        }
        let x = input.reshape(&[1, self.n_in()])?;
        let dy = d_output.reshape(&[1, self.n_out()])?;
        let (p, dx) = self.backward_batch(&x, &dy, true)?;
        Ok(LayerGradients {
            d_weights: p.d_weights,
            d_bias: p.d_bias,
            d_input: dx.unwrap().into_reshape(&[self.n_in()])?,
        })
    }

    /// Batched backward pass; parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        input: &Tensor,
        d_output: &Tensor,
        want_input: bool,
    ) -> Result<(ParamGradients, Option<Tensor>)> {
        let batch = self.check_batch(input)?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        if d_output.shape() != [batch, n_out] {
            return Err(Error::shape(format!(
                "dense d_output shape {:?}, expected {:?}",
                d_output.shape(),
                [batch, n_out]
            )));
        }
        let dy = View::dense(d_output.data(), batch, n_out);
        let mut d_w = self.weights.zeros_like();
        gemm(
            dy.t(),
            View::dense(input.data(), batch, n_in),
            0.0,
            ViewMut::dense(d_w.data_mut(), n_out, n_in),
        );
        let mut d_b = self.bias.zeros_like();
        for row in d_output.data().chunks_exact(n_out) {
            for (acc, &g) in d_b.data_mut().iter_mut().zip(row) {
                *acc += g;
            }
        }
        let d_x = if want_input {
            let mut d_x = input.zeros_like();
            gemm(
                dy,
                View::dense(self.weights.data(), n_out, n_in),
                0.0,
                ViewMut::dense(d_x.data_mut(), batch, n_in),
            );
            Some(d_x)
        } else {
            None
        };
        Ok((
            ParamGradients {
                d_weights: d_w,
                d_bias: d_b,
            },
            d_x,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::fd;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let layer = Dense::new(
            Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            Tensor::zeros(&[2]).unwrap(),
        )
        .unwrap();
        let y = layer.forward(&Tensor::new(&[2], 1.0).unwrap()).unwrap();
        assert_eq!(y.data(), &[3.0, 7.0]);
    }

    #[test]
    fn identity_and_zero_input() {
        let mut eye = Tensor::zeros(&[3, 3]).unwrap();
        for i in 0..3 {
            eye.data_mut()[i * 4] = 1.0;
        }
        let layer = Dense::new(eye, Tensor::zeros(&[3]).unwrap()).unwrap();
        let x = fd::random(&[3], 1);
        assert_eq!(layer.forward(&x).unwrap(), x);

        let layer = Dense::new(fd::random(&[2, 3], 2), fd::random(&[2], 3)).unwrap();
        let y = layer.forward(&Tensor::zeros(&[3]).unwrap()).unwrap();
        assert_eq!(y.data(), layer.bias.data());
    }

    #[test]
    fn length_mismatch() {
        let layer = Dense::zeros(3, 2).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[4]).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            layer.backward(&Tensor::zeros(&[3]).unwrap(), &Tensor::zeros(&[3]).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_upstream_and_scalar_cases() {
        let layer = Dense::new(fd::random(&[2, 3], 4), fd::random(&[2], 5)).unwrap();
        let g = layer
            .backward(&fd::random(&[3], 6), &Tensor::zeros(&[2]).unwrap())
            .unwrap();
        assert!(g
            .d_weights
            .data()
            .iter()
            .chain(g.d_bias.data())
            .chain(g.d_input.data())
            .all(|&v| v == 0.0));

        let layer = Dense::new(
            Tensor::from_vec(&[1, 1], vec![0.3]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let g = layer
            .backward(
                &Tensor::new(&[1], 4.0).unwrap(),
                &Tensor::new(&[1], -0.5).unwrap(),
            )
            .unwrap();
        assert_eq!(g.d_weights.data(), &[-2.0]);
        assert_eq!(g.d_bias.data(), &[-0.5]);
        assert_eq!(g.d_input.data(), &[-0.5 * 0.3]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layer = Dense::new(fd::random(&[4, 3], 7), fd::random(&[4], 8)).unwrap();
        let x = fd::random(&[3], 9);
        let r = fd::random(&[4], 10);
        let g = layer.backward(&x, &r).unwrap();
        let num_w = fd::numeric_grad(&layer.weights, |w| {
            let l = Dense::new(w.clone(), layer.bias.clone()).unwrap();
            fd::dot(&l.forward(&x).unwrap(), &r)
        });
        let num_b = fd::numeric_grad(&layer.bias, |b| {
            let l = Dense::new(layer.weights.clone(), b.clone()).unwrap();
            fd::dot(&l.forward(&x).unwrap(), &r)
        });
        let num_x = fd::numeric_grad(&x, |xx| fd::dot(&layer.forward(xx).unwrap(), &r));
        fd::assert_close(&g.d_weights, &num_w, 1e-6, 1e-7);
        fd::assert_close(&g.d_bias, &num_b, 1e-6, 1e-7);
        fd::assert_close(&g.d_input, &num_x, 1e-6, 1e-7);
    }

    proptest! {
        #[test]
        fn linear_in_input_without_bias(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let layer = Dense::new(fd::random(&[3, 5], seed), Tensor::zeros(&[3]).unwrap()).unwrap();
            let x = fd::random(&[5], seed + 1);
            let y = fd::random(&[5], seed + 2);
            let lhs = layer.forward(&x.map(|v| a * v).add(&y.map(|v| b * v)).unwrap()).unwrap();
            let rhs = layer.forward(&x).unwrap().map(|v| a * v)
                .add(&layer.forward(&y).unwrap().map(|v| b * v)).unwrap();
            for (p, q) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }
    }
}
