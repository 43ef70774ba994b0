use crate::error::{Error, Result};
use crate::gemm::{gemm, View, ViewMut};
use crate::tensor::Tensor;

use super::{LayerGradients, ParamGradients};

/// Valid (unpadded) stride-1 1D convolution in cross-correlation form:
/// `out[f, t] = bias[f] + sum_{c,k} w[f, c, k] * x[c, t + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[out_channels, in_channels, kernel]`
    pub weights: Tensor,
    /// `[out_channels]`
    pub bias: Tensor,
}

impl Conv1d {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "conv weights must be rank 3, got {s:?}"
            )));
        }
        if bias.shape() != [s[0]] {
            return Err(Error::shape(format!(
                "conv bias shape {:?} does not match {} filters",
                bias.shape(),
                s[0]
            )));
        }
        Ok(Self { weights, bias })
    }

    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, kernel])?,
            Tensor::zeros(&[out_channels])?,
        )
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn output_len(&self, input_len: usize) -> Result<usize> {
        let k = self.kernel();
        if input_len < k {
            return Err(Error::shape(format!(
                "input length {input_len} is shorter than kernel {k}"
            )));
        }
        Ok(input_len - k + 1)
    }

    fn check_batch(&self, input: &Tensor) -> Result<(usize, usize, usize)> {
        let s = input.shape();
        if s.len() != 3 {
            return Err(Error::shape(format!(
                "conv input must be [B, C, L], got {s:?}"
            )));
        }
        if s[1] != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                s[1]
            )));
        }
        let out_len = self.output_len(s[2])?;
        Ok((s[0], s[2], out_len))
    }

    /// `[C_in, L] -> [C_out, L - K + 1]`
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let batched = as_batch(input)?;
        let out = self.forward_batch(&batched)?;
        let s = out.shape().to_vec();
        out.into_reshape(&s[1..])
    }

    /// `[B, C_in, L] -> [B, C_out, L - K + 1]`
    pub fn forward_batch(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, len, out_len) = self.check_batch(input)?;
        let (c_out, c_in, k) = (self.out_channels(), self.in_channels(), self.kernel());
        let cols = im2col(input.data(), batch, c_in, len, k, out_len);
        let n = batch * out_len;
        let mut mat = vec![0.0; c_out * n];
        gemm(
            View::dense(self.weights.data(), c_out, c_in * k),
            View::dense(&cols, c_in * k, n),
            0.0,
            ViewMut::dense(&mut mat, c_out, n),
        );
        let mut out = Tensor::zeros(&[batch, c_out, out_len])?;
        let o = out.data_mut();
        for f in 0..c_out {
            let bias = self.bias.data()[f];
            let src = &mat[f * n..(f + 1) * n];
            for b in 0..batch {
                let dst = &mut o[(b * c_out + f) * out_len..(b * c_out + f + 1) * out_len];
                for (d, &v) in dst.iter_mut().zip(&src[b * out_len..(b + 1) * out_len]) {
                    *d = v + bias;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor, d_output: &Tensor) -> Result<LayerGradients> {
        let x = as_batch(input)?;
        let dy = as_batch(d_output)?;
        let (params, d_input) = self.backward_batch(&x, &dy, true)?;
        let d_input = d_input
            .expect("input gradient requested")
            .into_reshape(input.shape())?;
        Ok(LayerGradients {
            d_weights: params.d_weights,
            d_bias: params.d_bias,
            d_input,
        })
    }

    /// Batched backward pass; parameter gradients are summed over the batch.
    pub fn backward_batch(
        &self,
        input: &Tensor,
        d_output: &Tensor,
        want_input: bool,
    ) -> Result<(ParamGradients, Option<Tensor>)> {
        let (batch, len, out_len) = self.check_batch(input)?;
        let (c_out, c_in, k) = (self.out_channels(), self.in_channels(), self.kernel());
        if d_output.shape() != [batch, c_out, out_len] {
            return Err(Error::shape(format!(
                "conv d_output shape {:?}, expected {:?}",
                d_output.shape(),
                [batch, c_out, out_len]
            )));
        }
        let n = batch * out_len;
        // dY as [C_out, B * L_out], matching the im2col column order.
        let mut dy = vec![0.0; c_out * n];
        let mut d_b = self.bias.zeros_like();
        for b in 0..batch {
            for f in 0..c_out {
                let src =
                    &d_output.data()[(b * c_out + f) * out_len..(b * c_out + f + 1) * out_len];
                dy[f * n + b * out_len..f * n + (b + 1) * out_len].copy_from_slice(src);
            }
        }
        for (f, row) in dy.chunks_exact(n).enumerate() {
            d_b.data_mut()[f] = row.iter().sum();
        }
        let cols = im2col(input.data(), batch, c_in, len, k, out_len);
        let mut d_w = self.weights.zeros_like();
        gemm(
            View::dense(&dy, c_out, n),
            View::dense(&cols, c_in * k, n).t(),
            0.0,
            ViewMut::dense(d_w.data_mut(), c_out, c_in * k),
        );
        drop(cols);
        let d_x = if want_input {
            let mut d_cols = vec![0.0; c_in * k * n];
            gemm(
                View::dense(self.weights.data(), c_out, c_in * k).t(),
                View::dense(&dy, c_out, n),
                0.0,
                ViewMut::dense(&mut d_cols, c_in * k, n),
            );
            let mut d_x = input.zeros_like();
            col2im_add(&d_cols, d_x.data_mut(), batch, c_in, len, k, out_len);
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

/// Unfolds `[B, C, L]` into `[C * K, B * L_out]` with row `c * K + j` and
/// column `b * L_out + t` holding `x[b, c, t + j]`.
fn im2col(x: &[f64], batch: usize, c_in: usize, len: usize, k: usize, out_len: usize) -> Vec<f64> {
    let n = batch * out_len;
    let mut cols = vec![0.0; c_in * k * n];
    for c in 0..c_in {
        for j in 0..k {
            let row = &mut cols[(c * k + j) * n..(c * k + j + 1) * n];
            for b in 0..batch {
                let src = &x[(b * c_in + c) * len + j..(b * c_in + c) * len + j + out_len];
                row[b * out_len..(b + 1) * out_len].copy_from_slice(src);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates column gradients back onto the input.
fn col2im_add(
    d_cols: &[f64],
    d_x: &mut [f64],
    batch: usize,
    c_in: usize,
    len: usize,
    k: usize,
    out_len: usize,
) {
    let n = batch * out_len;
    for c in 0..c_in {
        for j in 0..k {
            let row = &d_cols[(c * k + j) * n..(c * k + j + 1) * n];
            for b in 0..batch {
                let dst = &mut d_x[(b * c_in + c) * len + j..(b * c_in + c) * len + j + out_len];
                for (d, &g) in dst.iter_mut().zip(&row[b * out_len..(b + 1) * out_len]) {
                    *d += g;
                }
            }
        }
    }
}

/// Prepends a unit batch axis to a single-sample tensor.
pub(super) fn as_batch(t: &Tensor) -> Result<Tensor> {
    let mut shape = Vec::with_capacity(t.shape().len() + 1);
    shape.push(1);
    shape.extend_from_slice(t.shape());
    t.reshape(&shape)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::fd;
    use proptest::prelude::*;

    /// Direct translation of the defining sum, used as an oracle.
    fn naive(layer: &Conv1d, x: &Tensor) -> Tensor {
        let (c_out, c_in, k) = (layer.out_channels(), layer.in_channels(), layer.kernel());
        let len = x.shape()[1];
        let out_len = len - k + 1;
        let mut out = vec![0.0; c_out * out_len];
        for f in 0..c_out {
            for t in 0..out_len {
                let mut acc = layer.bias.data()[f];
                for c in 0..c_in {
                    for j in 0..k {
                        acc += layer.weights.data()[(f * c_in + c) * k + j]
                            * x.data()[c * len + t + j];
                    }
                }
                out[f * out_len + t] = acc;
            }
        }
        Tensor::from_vec(&[c_out, out_len], out).unwrap()
    }

    fn random_layer(c_in: usize, c_out: usize, k: usize, seed: u64) -> Conv1d {
        Conv1d::new(
            fd::random(&[c_out, c_in, k], seed),
            fd::random(&[c_out], seed + 1),
        )
        .unwrap()
    }

    #[test]
    fn hand_example() {
        let layer = Conv1d::new(
            Tensor::from_vec(&[1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[-2.0]);
    }

    #[test]
    fn output_length_for_default_window() {
        let layer = Conv1d::zeros(6, 4, 5).unwrap();
        let x = Tensor::zeros(&[6, 600]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().shape(), &[4, 596]);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let mut layer = Conv1d::zeros(2, 3, 4).unwrap();
        layer.bias = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = layer.forward(&fd::random(&[2, 9], 3)).unwrap();
        for (f, row) in out.data().chunks(6).enumerate() {
            assert!(row.iter().all(|&v| v == layer.bias.data()[f]));
        }
    }

    #[test]
    fn shape_errors() {
        let layer = Conv1d::zeros(2, 3, 4).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[2, 3]).unwrap()),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[3, 8]).unwrap()),
            Err(Error::Shape(_))
        ));
        let x = Tensor::zeros(&[2, 8]).unwrap();
        let bad = Tensor::zeros(&[3, 4]).unwrap();
        assert!(matches!(layer.backward(&x, &bad), Err(Error::Shape(_))));
    }

    #[test]
    fn matches_naive_sum() {
        let layer = random_layer(3, 4, 3, 10);
        let x = fd::random(&[3, 11], 11);
        let got = layer.forward(&x).unwrap();
        let want = naive(&layer, &x);
        for (a, b) in got.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_per_sample() {
        let layer = random_layer(2, 3, 3, 20);
        let x = fd::random(&[3, 2, 8], 21);
        let out = layer.forward_batch(&x).unwrap();
        for b in 0..3 {
            let xb = Tensor::from_vec(&[2, 8], x.row(b).to_vec()).unwrap();
            assert_eq!(layer.forward(&xb).unwrap().data(), out.row(b));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let layer = random_layer(2, 3, 3, 30);
        let x = fd::random(&[2, 7], 31);
        let g = layer
            .backward(&x, &Tensor::zeros(&[3, 5]).unwrap())
            .unwrap();
        assert!(g.d_weights.data().iter().all(|&v| v == 0.0));
        assert!(g.d_bias.data().iter().all(|&v| v == 0.0));
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let layer = Conv1d::new(
            Tensor::from_vec(&[1, 1, 1], vec![0.7]).unwrap(),
            Tensor::zeros(&[1]).unwrap(),
        )
        .unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![-1.5]).unwrap();
        let dy = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        let g = layer.backward(&x, &dy).unwrap();
        assert_eq!(g.d_weights.data(), &[2.0 * -1.5]);
        assert_eq!(g.d_bias.data(), &[2.0]);
        assert_eq!(g.d_input.data(), &[2.0 * 0.7]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let layer = random_layer(2, 3, 3, 40);
        let x = fd::random(&[2, 7], 41);
        let r = fd::random(&[3, 5], 42);
        let g = layer.backward(&x, &r).unwrap();

        let num_w = fd::numeric_grad(&layer.weights, |w| {
            let l = Conv1d::new(w.clone(), layer.bias.clone()).unwrap();
            fd::dot(&l.forward(&x).unwrap(), &r)
        });
        let num_b = fd::numeric_grad(&layer.bias, |b| {
            let l = Conv1d::new(layer.weights.clone(), b.clone()).unwrap();
            fd::dot(&l.forward(&x).unwrap(), &r)
        });
        let num_x = fd::numeric_grad(&x, |xx| fd::dot(&layer.forward(xx).unwrap(), &r));
        fd::assert_close(&g.d_weights, &num_w, 1e-5, 1e-7);
        fd::assert_close(&g.d_bias, &num_b, 1e-5, 1e-7);
        fd::assert_close(&g.d_input, &num_x, 1e-5, 1e-7);
    }

    #[test]
    fn backward_batch_sums_per_sample_gradients() {
        let layer = random_layer(2, 2, 2, 50);
        let x = fd::random(&[2, 2, 6], 51);
        let dy = fd::random(&[2, 2, 5], 52);
        let (p, dx) = layer.backward_batch(&x, &dy, true).unwrap();
        let mut dw = layer.weights.zeros_like();
        for b in 0..2 {
            let xb = Tensor::from_vec(&[2, 6], x.row(b).to_vec()).unwrap();
            let dyb = Tensor::from_vec(&[2, 5], dy.row(b).to_vec()).unwrap();
            let g = layer.backward(&xb, &dyb).unwrap();
            dw = dw.add(&g.d_weights).unwrap();
            assert_eq!(g.d_input.data(), dx.as_ref().unwrap().row(b));
        }
        for (a, b) in dw.data().iter().zip(p.d_weights.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn output_length_is_valid_convolution(len in 1usize..64, k in 1usize..8) {
            let layer = Conv1d::zeros(1, 1, k).unwrap();
            let x = Tensor::zeros(&[1, len]).unwrap();
            match layer.forward(&x) {
                Ok(out) => { prop_assert!(len >= k); prop_assert_eq!(out.shape()[1], len - k + 1); }
                Err(_) => prop_assert!(len < k),
            }
        }

        #[test]
        fn linear_in_input_without_bias(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let mut layer = random_layer(2, 2, 3, seed);
            layer.bias = Tensor::zeros(&[2]).unwrap();
            let x = fd::random(&[2, 9], seed + 7);
            let y = fd::random(&[2, 9], seed + 8);
            let mix = x.map(|v| a * v).add(&y.map(|v| b * v)).unwrap();
            let lhs = layer.forward(&mix).unwrap();
            let rhs = layer.forward(&x).unwrap().map(|v| a * v)
                .add(&layer.forward(&y).unwrap().map(|v| b * v)).unwrap();
            for (p, q) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((p - q).abs() < 1e-10);
            }
        }
    }
}
