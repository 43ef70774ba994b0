use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| if x > 0.0 { x } else { 0.0 })
}

/// Passes `d_output` where the forward input was strictly positive.
pub fn relu_backward(input: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    if input.shape() != d_output.shape() {
        return Err(Error::shape(format!(
            "relu backward shapes {:?} and {:?} differ",
            input.shape(),
            d_output.shape()
        )));
    }
    let mut d = d_output.clone();
    for (g, &x) in d.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(d)
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(logistic)
}

/// Uses the forward *output*: `d_in = d_out * y * (1 - y)`.
pub fn sigmoid_backward(output: &Tensor, d_output: &Tensor) -> Result<Tensor> {
    if output.shape() != d_output.shape() {
        return Err(Error::shape(format!(
            "sigmoid backward shapes {:?} and {:?} differ",
            output.shape(),
            d_output.shape()
        )));
    }
    let mut d = d_output.clone();
    for (g, &y) in d.data_mut().iter_mut().zip(output.data()) {
        *g *= y * (1.0 - y);
    }
    Ok(d)
}
