//! Forward and backward passes for the layer kinds used by the network:
//! valid 1D convolution, non-overlapping max pooling, dense, ReLU and sigmoid.
//!
//! Every pass is a pure function of its arguments. Pooling returns its argmax
//! record instead of storing it, so a layer value can be shared across threads.
//!
//! Single-sample entry points take `[C, L]` / `[N]` tensors; the `*_batch`
//! variants take a leading batch axis and are what the network uses.

mod activation;
mod conv;
mod dense;
mod pool;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::Conv1d;
pub use dense::Dense;
pub use pool::{MaxPool1d, PoolRecord};

use crate::tensor::Tensor;

/// Gradients produced by one backward call of a parameterized layer.
#[derive(Debug, Clone)]
pub struct LayerGradients {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
    pub d_input: Tensor,
}

/// Parameter gradients only, for batched passes that may skip `d_input`.
#[derive(Debug, Clone)]
pub struct ParamGradients {
    pub d_weights: Tensor,
    pub d_bias: Tensor,
}
