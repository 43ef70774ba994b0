//! Finite-difference verification of every backward pass.
//!
//! Each layer kind is checked on a small random instance through the scalar
//! objective `sum(r * layer(x))` with a fixed random `r`, comparing every
//! analytic gradient element with a central difference. The full model is
//! checked on a 30-sample window by probing randomly chosen parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{relu, relu_backward, sigmoid, sigmoid_backward, Conv1d, Dense, MaxPool1d};
use crate::lossoptim::{batch_loss, one_hot, LossMode};
use crate::netspec::Model;
use crate::tensor::Tensor;

pub const REL_TOLERANCE: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;
pub const STEP: f64 = 1e-5;
pub const MODEL_INPUT_LENGTH: usize = 30;
pub const MODEL_PROBES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub component: String,
    pub compared: usize,
    /// Largest `|a - n| / max(|a|, |n|, ABS_FLOOR / REL_TOLERANCE)`: an element
    /// passes when within the relative tolerance or under the absolute floor,
    /// which is exactly when this ratio is at most `REL_TOLERANCE`.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub checks: Vec<GradCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Options for [`run`]. `perturb` scales every analytic gradient by
/// `1 + perturb`, which must make the suite fail; it exists to prove the
/// checker can fail.
#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub perturb: f64,
    pub loss_mode: LossMode,
}

struct Comparison {
    compared: usize,
    max_rel: f64,
}

impl Comparison {
    fn new() -> Self {
        Self {
            compared: 0,
            max_rel: 0.0,
        }
    }

    fn add(&mut self, analytic: f64, numeric: f64) {
        self.compared += 1;
        let scale = analytic
            .abs()
            .max(numeric.abs())
            .max(ABS_FLOOR / REL_TOLERANCE);
        self.max_rel = self.max_rel.max((analytic - numeric).abs() / scale);
    }

    fn add_all(&mut self, analytic: &Tensor, numeric: &Tensor) {
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            self.add(a, n);
        }
    }

    fn finish(self, component: &str) -> GradCheck {
        GradCheck {
            component: component.to_string(),
            compared: self.compared,
            max_rel_error: self.max_rel,
            passed: self.compared > 0 && self.max_rel <= REL_TOLERANCE,
        }
    }
}

fn central(x: &Tensor, i: usize, h: f64, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<f64> {
    let mut probe = x.clone();
    probe.data_mut()[i] = x.data()[i] + h;
    let up = f(&probe)?;
    probe.data_mut()[i] = x.data()[i] - h;
    let down = f(&probe)?;
    Ok((up - down) / (2.0 * h))
}

fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> Result<f64>) -> Result<Tensor> {
    let mut g = x.zeros_like();
    for i in 0..x.len() {
        g.data_mut()[i] = central(x, i, STEP, &mut f)?;
    }
    Ok(g)
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let n = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
}

/// Distinct values spaced far wider than the probe step, so pooling never ties.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Result<Tensor> {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.01).collect();
    v.shuffle(rng);
    Tensor::from_vec(shape, v)
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn scaled(t: Tensor, s: f64) -> Tensor {
    if s == 1.0 {
        t
    } else {
        t.map(|v| v * s)
    }
}

fn check_conv(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let (b, c_in, c_out, k, len) = (2, 3, 4, 5, 12);
    let w = uniform(&[c_out, c_in, k], -1.0, 1.0, rng)?;
    let bias = uniform(&[c_out], -1.0, 1.0, rng)?;
    let x = uniform(&[b, c_in, len], -1.0, 1.0, rng)?;
    let r = uniform(&[b, c_out, len - k + 1], -1.0, 1.0, rng)?;
    let layer = Conv1d::new(w.clone(), bias.clone())?;
    let (g, d_x) = layer.backward_batch(&x, &r, true)?;
    let mut cmp = Comparison::new();
    let num_x = numeric_grad(&x, |xx| Ok(dot(&r, &layer.forward_batch(xx)?)))?;
    cmp.add_all(
        &scaled(d_x.expect("input gradient requested"), scale),
        &num_x,
    );
    let num_w = numeric_grad(&w, |ww| {
        Ok(dot(
            &r,
            &Conv1d::new(ww.clone(), bias.clone())?.forward_batch(&x)?,
        ))
    })?;
    cmp.add_all(&scaled(g.d_weights, scale), &num_w);
    let num_b = numeric_grad(&bias, |bb| {
        Ok(dot(
            &r,
            &Conv1d::new(w.clone(), bb.clone())?.forward_batch(&x)?,
        ))
    })?;
    cmp.add_all(&scaled(g.d_bias, scale), &num_b);
    Ok(cmp.finish("conv1d"))
}

fn check_relu(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let x = away_from_zero(&[2, 3, 7], rng)?;
    let r = uniform(x.shape(), -1.0, 1.0, rng)?;
    let mut cmp = Comparison::new();
    let num = numeric_grad(&x, |xx| Ok(dot(&r, &relu(xx))))?;
    cmp.add_all(&scaled(relu_backward(&x, &r)?, scale), &num);
    Ok(cmp.finish("relu"))
}

fn check_pool(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let pool = MaxPool1d::new(3)?;
    let x = distinct(&[2, 3, 11], rng)?;
    let (y, rec) = pool.forward(&x)?;
    let r = uniform(y.shape(), -1.0, 1.0, rng)?;
    let mut cmp = Comparison::new();
    let num = numeric_grad(&x, |xx| Ok(dot(&r, &pool.forward(xx)?.0)))?;
    cmp.add_all(&scaled(MaxPool1d::backward(&rec, &r)?, scale), &num);
    Ok(cmp.finish("maxpool1d"))
}

fn check_flatten(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let x = uniform(&[2, 4, 5], -1.0, 1.0, rng)?;
    let r = uniform(&[2, 20], -1.0, 1.0, rng)?;
    let mut cmp = Comparison::new();
    let num = numeric_grad(&x, |xx| Ok(dot(&r, &xx.reshape(&[2, 20])?)))?;
    cmp.add_all(&scaled(r.reshape(x.shape())?, scale), &num);
    Ok(cmp.finish("flatten"))
}

fn check_dense(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let (b, n_in, n_out) = (3, 7, 4);
    let w = uniform(&[n_out, n_in], -1.0, 1.0, rng)?;
    let bias = uniform(&[n_out], -1.0, 1.0, rng)?;
    let x = uniform(&[b, n_in], -1.0, 1.0, rng)?;
    let r = uniform(&[b, n_out], -1.0, 1.0, rng)?;
    let layer = Dense::new(w.clone(), bias.clone())?;
    let (g, d_x) = layer.backward_batch(&x, &r, true)?;
    let mut cmp = Comparison::new();
    let num_x = numeric_grad(&x, |xx| Ok(dot(&r, &layer.forward_batch(xx)?)))?;
    cmp.add_all(
        &scaled(d_x.expect("input gradient requested"), scale),
        &num_x,
    );
    let num_w = numeric_grad(&w, |ww| {
        Ok(dot(
            &r,
            &Dense::new(ww.clone(), bias.clone())?.forward_batch(&x)?,
        ))
    })?;
    cmp.add_all(&scaled(g.d_weights, scale), &num_w);
    let num_b = numeric_grad(&bias, |bb| {
        Ok(dot(
            &r,
            &Dense::new(w.clone(), bb.clone())?.forward_batch(&x)?,
        ))
    })?;
    cmp.add_all(&scaled(g.d_bias, scale), &num_b);
    Ok(cmp.finish("dense"))
}

fn check_sigmoid(rng: &mut ChaCha8Rng, scale: f64) -> Result<GradCheck> {
    let x = uniform(&[3, 6], -4.0, 4.0, rng)?;
    let r = uniform(x.shape(), -1.0, 1.0, rng)?;
    let mut cmp = Comparison::new();
    let num = numeric_grad(&x, |xx| Ok(dot(&r, &sigmoid(xx))))?;
    cmp.add_all(&scaled(sigmoid_backward(&sigmoid(&x), &r)?, scale), &num);
    Ok(cmp.finish("sigmoid"))
}

fn check_loss(rng: &mut ChaCha8Rng, scale: f64, mode: LossMode) -> Result<GradCheck> {
    let (b, k) = (4, 6);
    let q = uniform(&[b, k], 0.05, 0.95, rng)?;
    let mut t = Vec::with_capacity(b * k);
    for _ in 0..b {
        t.extend_from_slice(one_hot(rng.random_range(0..k), k)?.data());
    }
    let targets = Tensor::from_vec(&[b, k], t)?;
    let analytic = crate::lossoptim::batch_gradient(&targets, &q, mode)?;
    let num = numeric_grad(&q, |qq| batch_loss(&targets, qq, mode))?;
    let mut cmp = Comparison::new();
    cmp.add_all(&scaled(analytic, scale), &num);
    Ok(cmp.finish("cross_entropy"))
}

/// Full 9-layer model at T = 30, probing random parameters. A probe whose
/// central difference changes between step `h` and `h / 4` straddles a ReLU or
/// pooling kink and is redrawn.
fn check_model(rng: &mut ChaCha8Rng, seed: u64, scale: f64, mode: LossMode) -> Result<GradCheck> {
    let n_classes = 12;
    let batch = 2;
    let mut model = Model::build(n_classes, MODEL_INPUT_LENGTH, seed)?;
    model.set_loss_mode(mode);
    let x = uniform(&[batch, 6, MODEL_INPUT_LENGTH], -2.0, 2.0, rng)?;
    let mut t = Vec::with_capacity(batch * n_classes);
    for _ in 0..batch {
        t.extend_from_slice(one_hot(rng.random_range(0..n_classes), n_classes)?.data());
    }
    let targets = Tensor::from_vec(&[batch, n_classes], t)?;
    let (_, grads) = model.loss_and_gradients(&x, &targets)?;

    let sizes: Vec<usize> = model.params().iter().map(|p| p.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut cmp = Comparison::new();
    let mut attempts = 0;
    let mut seen = std::collections::HashSet::new();
    while cmp.compared < MODEL_PROBES && attempts < 50 * MODEL_PROBES {
        attempts += 1;
        let mut flat = rng.random_range(0..total);
        if !seen.insert(flat) {
            continue;
        }
        let mut tensor = 0;
        while flat >= sizes[tensor] {
            flat -= sizes[tensor];
            tensor += 1;
        }
        let original = model.params()[tensor].clone();
        let mut loss_at = |p: &Tensor| -> Result<f64> {
            *model.params_mut()[tensor] = p.clone();
            batch_loss(&targets, &model.forward(&x)?, mode)
        };
        let coarse = central(&original, flat, STEP, &mut loss_at)?;
        let fine = central(&original, flat, STEP / 4.0, &mut loss_at)?;
        *model.params_mut()[tensor] = original;
        if (coarse - fine).abs() > 1e-3 * coarse.abs().max(fine.abs()).max(1e-6) {
            continue;
        }
        cmp.add(scale * grads[tensor].data()[flat], coarse);
    }
    Ok(cmp.finish("full_model"))
}

/// Runs every check. Instances are drawn from `seed`.
pub fn run(seed: u64, options: GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 + options.perturb;
    let checks = vec![
        check_conv(&mut rng, s)?,
        check_relu(&mut rng, s)?,
        check_pool(&mut rng, s)?,
        check_flatten(&mut rng, s)?,
        check_dense(&mut rng, s)?,
        check_sigmoid(&mut rng, s)?,
        check_loss(&mut rng, s, options.loss_mode)?,
        check_model(&mut rng, seed, s, options.loss_mode)?,
    ];
    Ok(GradcheckReport { seed, checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_for_several_seeds_and_modes() {
        for seed in [0, 1, 99] {
            for mode in [LossMode::SumNormalized, LossMode::Independent] {
                let r = run(
                    seed,
                    GradcheckOptions {
                        perturb: 0.0,
                        loss_mode: mode,
                    },
                )
                .unwrap();
                for c in &r.checks {
                    assert!(c.passed, "seed {seed} {mode:?}: {c:?}");
                }
            }
        }
    }

    #[test]
    fn perturbed_gradients_fail_everywhere() {
        let r = run(
            3,
            GradcheckOptions {
                perturb: 1e-2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures().count(), r.checks.len());
    }

    #[test]
    fn components_are_listed_once() {
        let r = run(5, GradcheckOptions::default()).unwrap();
        let names: Vec<&str> = r.checks.iter().map(|c| c.component.as_str()).collect();
        assert_eq!(
            names,
            [
                "conv1d",
                "relu",
                "maxpool1d",
                "flatten",
                "dense",
                "sigmoid",
                "cross_entropy",
                "full_model"
            ]
        );
        assert_eq!(r.checks.last().unwrap().compared, MODEL_PROBES);
    }
}
