//! One-dimensional CNN array for recognising signed sentences from 6-axis
//! wearable IMU recordings (tri-axial accelerometer + gyroscope at 100 Hz).
//!
//! Two identically shaped networks form the array: one classifies the 12
//! general sentences, the other the 8 questions. Samples are routed by their
//! context tag. A single 20-class network trained on the unsegregated corpus
//! serves as the conventional baseline.
//!
//! Everything numeric is written out by hand: forward and backward passes in
//! [`layers`], the loss and RMSprop in [`lossoptim`], the network template in
//! [`netspec`]. [`synthgen`] produces a deterministic synthetic corpus in the
//! on-disk format read by [`dataset`], and [`arraytrain`] runs training and
//! the peak-performance comparison.

pub mod arraytrain;
pub mod dataset;
pub mod error;
mod gemm;
pub mod gradcheck;
mod keyed;
pub mod layers;
pub mod lossoptim;
pub mod netspec;
pub mod synthgen;
pub mod tensor;

pub use error::{Error, Result};
pub use netspec::{Model, NetworkSpec};
pub use tensor::Tensor;
