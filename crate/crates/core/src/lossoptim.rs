//! Categorical cross-entropy over independent sigmoid likelihoods, its
//! gradient with respect to those likelihoods, and the RMSprop update.
//!
//! The loss for one sample is `-sum_i p_i ln q_i` with `p` one-hot, so only the
//! true-class likelihood contributes and the gradient `-p_i / q_i` vanishes on
//! every false class. Likelihoods are clamped to `[Q_FLOOR, 1 - Q_FLOOR]`
//! before the log and the division.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const Q_FLOOR: f64 = 1e-7;

fn clamp_q(q: f64) -> f64 {
    q.clamp(Q_FLOOR, 1.0 - Q_FLOOR)
}

/// One-hot vector of length `n_classes` with a 1 at `class_index`.
pub fn one_hot(class_index: usize, n_classes: usize) -> Result<Tensor> {
    if class_index >= n_classes {
        return Err(Error::contract(format!(
            "class index {class_index} out of range for {n_classes} classes"
        )));
    }
    let mut t = Tensor::zeros(&[n_classes])?;
    t.data_mut()[class_index] = 1.0;
    Ok(t)
}

/// Returns the true-class index of a one-hot target.
fn true_class(p: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &v) in p.iter().enumerate() {
        if v == 1.0 {
            if hot.is_some() {
                return Err(Error::contract("target has more than one hot class"));
            }
            hot = Some(i);
        } else if v != 0.0 {
            return Err(Error::contract(format!(
                "target element {i} is {v}, not 0 or 1"
            )));
        }
    }
    hot.ok_or_else(|| Error::contract("target has no hot class"))
}

fn check_pair(p: &[f64], q: &[f64]) -> Result<usize> {
    if p.len() != q.len() {
        return Err(Error::shape(format!(
            "target has {} classes but prediction has {}",
            p.len(),
            q.len()
        )));
    }
    true_class(p)
}

/// `-sum_i p_i ln(clamp(q_i))` for a single sample.
pub fn categorical_cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(-p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| pi * clamp_q(qi).ln())
        .sum::<f64>())
}

/// `dH/dq_i = -p_i / clamp(q_i)`; zero on every false class.
pub fn ce_gradient(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    check_pair(p, q)?;
    Ok(p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi == 0.0 { 0.0 } else { -pi / clamp_q(qi) })
        .collect())
}

/// How per-class likelihoods enter the cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `q / sum(q)` is scored, so false classes are pushed down.
    #[default]
    SumNormalized,
    /// Each sigmoid output is scored on its own.
    Independent,
}

/// `-sum_i p_i ln(clamp(q_i / sum_j q_j))` for a single sample.
pub fn normalized_cross_entropy(p: &[f64], q: &[f64]) -> Result<f64> {
    let t = check_pair(p, q)?;
    Ok(-clamp_q(q[t] / q_sum(q)).ln())
}

/// Gradient of [`normalized_cross_entropy`] with respect to `q`:
/// `1 / S - [i = t] / q_t`, or zero where the clamp is active.
pub fn normalized_ce_gradient(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    let t = check_pair(p, q)?;
    let s = q_sum(q);
    let r = q[t] / s;
    if r != clamp_q(r) {
        return Ok(vec![0.0; q.len()]);
    }
    Ok((0..q.len())
        .map(|i| {
            if i == t {
                1.0 / s - 1.0 / q[t]
            } else {
                1.0 / s
            }
        })
        .collect())
}

fn q_sum(q: &[f64]) -> f64 {
    q.iter().sum::<f64>().max(f64::MIN_POSITIVE)
}

impl LossMode {
    pub fn sample_loss(self, p: &[f64], q: &[f64]) -> Result<f64> {
        match self {
            LossMode::SumNormalized => normalized_cross_entropy(p, q),
            LossMode::Independent => categorical_cross_entropy(p, q),
        }
    }

    pub fn sample_gradient(self, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
        match self {
            LossMode::SumNormalized => normalized_ce_gradient(p, q),
            LossMode::Independent => ce_gradient(p, q),
        }
    }
}

/// Mean per-sample loss over `[B, K]` targets and predictions.
pub fn batch_loss(targets: &Tensor, predictions: &Tensor, mode: LossMode) -> Result<f64> {
    check_batch(targets, predictions)?;
    let k = targets.shape()[1];
    let mut total = 0.0;
    for (p, q) in targets
        .data()
        .chunks_exact(k)
        .zip(predictions.data().chunks_exact(k))
    {
        total += mode.sample_loss(p, q)?;
    }
    Ok(total / targets.shape()[0] as f64)
}

/// Gradient of [`batch_loss`] with respect to every prediction element.
pub fn batch_gradient(targets: &Tensor, predictions: &Tensor, mode: LossMode) -> Result<Tensor> {
    check_batch(targets, predictions)?;
    let (b, k) = (targets.shape()[0], targets.shape()[1]);
    let mut out = Vec::with_capacity(b * k);
    for (p, q) in targets
        .data()
        .chunks_exact(k)
        .zip(predictions.data().chunks_exact(k))
    {
        out.extend(
            mode.sample_gradient(p, q)?
                .into_iter()
                .map(|g| g / b as f64),
        );
    }
    Tensor::from_vec(&[b, k], out)
}

fn check_batch(targets: &Tensor, predictions: &Tensor) -> Result<()> {
    if targets.shape().len() != 2 || targets.shape() != predictions.shape() {
        return Err(Error::shape(format!(
            "targets {:?} and predictions {:?} must both be [B, K]",
            targets.shape(),
            predictions.shape()
        )));
    }
    Ok(())
}

/// Fixed RMSprop hyperparameters for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsPropConfig {
    pub lr: f64,
    pub rho: f64,
    pub eps: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            rho: 0.9,
            eps: 1e-8,
        }
    }
}

/// Running mean of squared gradients for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsPropState {
    pub config: RmsPropConfig,
    pub mean_square: Tensor,
}

impl RmsPropState {
    pub fn new(config: RmsPropConfig, like: &Tensor) -> Self {
        Self {
            config,
            mean_square: like.zeros_like(),
        }
    }

    /// `s <- rho s + (1 - rho) g^2; theta <- theta - lr g / (sqrt(s) + eps)`
    pub fn step(&mut self, params: &mut Tensor, grads: &Tensor) -> Result<()> {
        if params.shape() != grads.shape() || params.shape() != self.mean_square.shape() {
            return Err(Error::shape(format!(
                "rmsprop shapes differ: params {:?}, grads {:?}, state {:?}",
                params.shape(),
                grads.shape(),
                self.mean_square.shape()
            )));
        }
        let RmsPropConfig { lr, rho, eps } = self.config;
        for ((theta, s), &g) in params
            .data_mut()
            .iter_mut()
            .zip(self.mean_square.data_mut())
            .zip(grads.data())
        {
            *s = rho * *s + (1.0 - rho) * g * g;
            *theta -= lr * g / (s.sqrt() + eps);
        }
        Ok(())
    }
}
