//! The network template and its persistence.
//!
//! ```text
//! Conv1d(6->128, k5) -> ReLU -> MaxPool(3) -> Conv1d(128->256, k5) -> ReLU -> MaxPool(3)
//!   -> Flatten -> Dense(flat->128) + ReLU -> Dense(128->n_classes) + Sigmoid
//! ```
//!
//! Counting the two post-convolution ReLUs as layers gives nine layers. Only
//! the class count and the input window length vary between instances.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{
    relu, relu_backward, sigmoid, sigmoid_backward, Conv1d, Dense, MaxPool1d, PoolRecord,
};
use crate::lossoptim::{batch_gradient, batch_loss, LossMode, RmsPropConfig, RmsPropState};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CNA1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub input_length: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub hidden_units: usize,
    pub n_classes: usize,
}

/// Temporal lengths after each feature-learning stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeChain {
    pub conv1_len: usize,
    pub pool1_len: usize,
    pub conv2_len: usize,
    pub pool2_len: usize,
    pub flatten_width: usize,
}

impl NetworkSpec {
    /// The standard template: 6 input channels, 128/256 filters of length 5,
    /// pool 3, 128 hidden units.
    pub fn standard(n_classes: usize, input_length: usize) -> Self {
        Self {
            input_channels: 6,
            input_length,
            conv1_filters: 128,
            conv2_filters: 256,
            kernel: 5,
            pool: 3,
            hidden_units: 128,
            n_classes,
        }
    }

    pub fn shape_chain(&self) -> Result<ShapeChain> {
        let dims = [
            self.input_channels,
            self.input_length,
            self.conv1_filters,
            self.conv2_filters,
            self.kernel,
            self.pool,
            self.hidden_units,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(Error::shape(format!(
                "network spec has a zero dimension: {self:?}"
            )));
        }
        let too_short = |stage: &str, len: usize, need: usize| {
            Error::shape(format!(
                "input length {} too short: {stage} sees {len} samples but needs {need}",
                self.input_length
            ))
        };
        let k = self.kernel;
        let p = self.pool;
        let t = self.input_length;
        if t < k {
            return Err(too_short("conv1", t, k));
        }
        let conv1_len = t - k + 1;
        if conv1_len < p {
            return Err(too_short("pool1", conv1_len, p));
        }
        let pool1_len = conv1_len / p;
        if pool1_len < k {
            return Err(too_short("conv2", pool1_len, k));
        }
        let conv2_len = pool1_len - k + 1;
        if conv2_len < p {
            return Err(too_short("pool2", conv2_len, p));
        }
        let pool2_len = conv2_len / p;
        Ok(ShapeChain {
            conv1_len,
            pool1_len,
            conv2_len,
            pool2_len,
            flatten_width: self.conv2_filters * pool2_len,
        })
    }

    fn as_u32s(&self) -> [usize; 7] {
        [
            self.input_channels,
            self.input_length,
            self.conv1_filters,
            self.conv2_filters,
            self.kernel,
            self.pool,
            self.hidden_units,
        ]
    }
}

/// One entry of the layer stack, for introspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
    },
    Relu,
    MaxPool {
        pool: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        units: usize,
        activation: Activation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// Activations cached by a forward pass for the backward pass.
struct Trace {
    input: Tensor,
    conv1: Tensor,
    pool1: Tensor,
    pool1_rec: PoolRecord,
    conv2: Tensor,
    pool2_rec: PoolRecord,
    flat: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    output: Tensor,
}

/// A built network plus one RMSprop state per parameter tensor.
#[derive(Debug, Clone)]
pub struct Model {
    spec: NetworkSpec,
    chain: ShapeChain,
    conv1: Conv1d,
    conv2: Conv1d,
    pool: MaxPool1d,
    hidden: Dense,
    output: Dense,
    optim: Vec<RmsPropState>,
    loss_mode: LossMode,
}

/// Names of the parameter tensors, in storage order.
pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "hidden.weight",
    "hidden.bias",
    "output.weight",
    "output.bias",
];

fn glorot(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

impl Model {
    /// Builds the standard template with seeded Glorot-uniform weights and zero biases.
    pub fn build(n_classes: usize, input_length: usize, seed: u64) -> Result<Self> {
        Self::build_with(
            NetworkSpec::standard(n_classes, input_length),
            seed,
            RmsPropConfig::default(),
        )
    }

    pub fn build_with(spec: NetworkSpec, seed: u64, optim: RmsPropConfig) -> Result<Self> {
        let chain = spec.shape_chain()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = spec.kernel;
        let c1 = spec.conv1_filters;
        let c2 = spec.conv2_filters;
        let conv1 = Conv1d::new(
            glorot(
                &[c1, spec.input_channels, k],
                spec.input_channels * k,
                c1 * k,
                &mut rng,
            )?,
            Tensor::zeros(&[c1])?,
        )?;
        let conv2 = Conv1d::new(
            glorot(&[c2, c1, k], c1 * k, c2 * k, &mut rng)?,
            Tensor::zeros(&[c2])?,
        )?;
        let hidden = Dense::new(
            glorot(
                &[spec.hidden_units, chain.flatten_width],
                chain.flatten_width,
                spec.hidden_units,
                &mut rng,
            )?,
            Tensor::zeros(&[spec.hidden_units])?,
        )?;
        let output = Dense::new(
            glorot(
                &[spec.n_classes, spec.hidden_units],
                spec.hidden_units,
                spec.n_classes,
                &mut rng,
            )?,
            Tensor::zeros(&[spec.n_classes])?,
        )?;
        Self::assemble(spec, conv1, conv2, hidden, output, optim)
    }

    fn assemble(
        spec: NetworkSpec,
        conv1: Conv1d,
        conv2: Conv1d,
        hidden: Dense,
        output: Dense,
        optim: RmsPropConfig,
    ) -> Result<Self> {
        let chain = spec.shape_chain()?;
        let mut model = Self {
            spec,
            chain,
            conv1,
            conv2,
            pool: MaxPool1d::new(spec.pool)?,
            hidden,
            output,
            optim: Vec::new(),
            loss_mode: LossMode::default(),
        };
        model.optim = model
            .params()
            .iter()
            .map(|p| RmsPropState::new(optim, p))
            .collect();
        Ok(model)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shape_chain(&self) -> ShapeChain {
        self.chain
    }

    pub fn n_classes(&self) -> usize {
        self.spec.n_classes
    }

    pub fn loss_mode(&self) -> LossMode {
        self.loss_mode
    }

    /// Selects the training loss; not part of the checkpoint.
    pub fn set_loss_mode(&mut self, mode: LossMode) {
        self.loss_mode = mode;
    }

    pub fn optimizer_config(&self) -> RmsPropConfig {
        self.optim[0].config
    }

    pub fn layers(&self) -> Vec<LayerKind> {
        let s = &self.spec;
        vec![
            LayerKind::Conv1d {
                in_channels: self.conv1.in_channels(),
                filters: self.conv1.out_channels(),
                kernel: self.conv1.kernel(),
            },
            LayerKind::Relu,
            LayerKind::MaxPool {
                pool: self.pool.pool,
            },
            LayerKind::Conv1d {
                in_channels: self.conv2.in_channels(),
                filters: self.conv2.out_channels(),
                kernel: self.conv2.kernel(),
            },
            LayerKind::Relu,
            LayerKind::MaxPool {
                pool: self.pool.pool,
            },
            LayerKind::Flatten,
            LayerKind::Dense {
                inputs: self.hidden.n_in(),
                units: s.hidden_units,
                activation: Activation::Relu,
            },
            LayerKind::Dense {
                inputs: self.output.n_in(),
                units: s.n_classes,
                activation: Activation::Sigmoid,
            },
        ]
    }

    pub fn params(&self) -> [&Tensor; 8] {
        [
            &self.conv1.weights,
            &self.conv1.bias,
            &self.conv2.weights,
            &self.conv2.bias,
            &self.hidden.weights,
            &self.hidden.bias,
            &self.output.weights,
            &self.output.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor; 8] {
        [
            &mut self.conv1.weights,
            &mut self.conv1.bias,
            &mut self.conv2.weights,
            &mut self.conv2.bias,
            &mut self.hidden.weights,
            &mut self.hidden.bias,
            &mut self.output.weights,
            &mut self.output.bias,
        ]
    }

    pub fn count_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let s = batch.shape();
        let want = [self.spec.input_channels, self.spec.input_length];
        if s.len() != 3 || s[1..] != want {
            return Err(Error::shape(format!(
                "model expects [B, {}, {}], got {s:?}",
                want[0], want[1]
            )));
        }
        Ok(s[0])
    }

    fn trace(&self, batch: &Tensor) -> Result<Trace> {
        let b = self.check_input(batch)?;
        let conv1 = self.conv1.forward_batch(batch)?;
        let (pool1, pool1_rec) = self.pool.forward(&relu(&conv1))?;
        let conv2 = self.conv2.forward_batch(&pool1)?;
        let (pool2, pool2_rec) = self.pool.forward(&relu(&conv2))?;
        let flat = pool2.into_reshape(&[b, self.chain.flatten_width])?;
        let hidden_pre = self.hidden.forward_batch(&flat)?;
        let hidden = relu(&hidden_pre);
        let output = sigmoid(&self.output.forward_batch(&hidden)?);
        Ok(Trace {
            input: batch.clone(),
            conv1,
            pool1,
            pool1_rec,
            conv2,
            pool2_rec,
            flat,
            hidden_pre,
            hidden,
            output,
        })
    }

    /// Per-sample sigmoid likelihoods `[B, n_classes]` for a `[B, C, T]` batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.trace(batch)?.output)
    }

    /// Shapes of every intermediate activation for a batch, in stack order.
    pub fn activation_shapes(&self, batch: &Tensor) -> Result<Vec<Vec<usize>>> {
        let t = self.trace(batch)?;
        let relu1 = t.conv1.shape().to_vec();
        let relu2 = t.conv2.shape().to_vec();
        let mut pool2 = relu2.clone();
        *pool2.last_mut().unwrap() = self.chain.pool2_len;
        Ok(vec![
            t.conv1.shape().to_vec(),
            relu1,
            t.pool1.shape().to_vec(),
            t.conv2.shape().to_vec(),
            relu2,
            pool2,
            t.flat.shape().to_vec(),
            t.hidden.shape().to_vec(),
            t.output.shape().to_vec(),
        ])
    }

    fn check_targets(&self, batch: &Tensor, targets: &Tensor) -> Result<()> {
        let b = self.check_input(batch)?;
        if targets.shape() != [b, self.spec.n_classes] {
            return Err(Error::shape(format!(
                "targets {:?} do not match [{b}, {}]",
                targets.shape(),
                self.spec.n_classes
            )));
        }
        Ok(())
    }

    /// Batch-mean loss and its gradient for every parameter tensor (in [`PARAM_NAMES`] order).
    pub fn loss_and_gradients(
        &self,
        batch: &Tensor,
        targets: &Tensor,
    ) -> Result<(f64, Vec<Tensor>)> {
        self.check_targets(batch, targets)?;
        let t = self.trace(batch)?;
        let b = targets.shape()[0];
        let loss = batch_loss(targets, &t.output, self.loss_mode)?;

        let d_q = batch_gradient(targets, &t.output, self.loss_mode)?;
        let d_z = sigmoid_backward(&t.output, &d_q)?;
        let (g_out, d_hidden) = self.output.backward_batch(&t.hidden, &d_z, true)?;
        let d_hidden_pre = relu_backward(&t.hidden_pre, &d_hidden.unwrap())?;
        let (g_hidden, d_flat) = self.hidden.backward_batch(&t.flat, &d_hidden_pre, true)?;
        let d_pool2 =
            d_flat
                .unwrap()
                .into_reshape(&[b, self.spec.conv2_filters, self.chain.pool2_len])?;
        let d_relu2 = MaxPool1d::backward(&t.pool2_rec, &d_pool2)?;
        let d_conv2 = relu_backward(&t.conv2, &d_relu2)?;
        let (g_conv2, d_pool1) = self.conv2.backward_batch(&t.pool1, &d_conv2, true)?;
        let d_relu1 = MaxPool1d::backward(&t.pool1_rec, &d_pool1.unwrap())?;
        let d_conv1 = relu_backward(&t.conv1, &d_relu1)?;
        let (g_conv1, _) = self.conv1.backward_batch(&t.input, &d_conv1, false)?;

        Ok((
            loss,
            vec![
                g_conv1.d_weights,
                g_conv1.d_bias,
                g_conv2.d_weights,
                g_conv2.d_bias,
                g_hidden.d_weights,
                g_hidden.d_bias,
                g_out.d_weights,
                g_out.d_bias,
            ],
        ))
    }

    /// One optimizer step on the batch-mean gradient. Returns the pre-update batch loss.
    pub fn backward_and_step(&mut self, batch: &Tensor, targets: &Tensor) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(batch, targets)?;
        self.apply_gradients(&grads)?;
        Ok(loss)
    }

    pub fn apply_gradients(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != PARAM_NAMES.len() {
            return Err(Error::shape(format!(
                "expected {} gradient tensors, got {}",
                PARAM_NAMES.len(),
                grads.len()
            )));
        }
        let mut optim = std::mem::take(&mut self.optim);
        let result = self
            .params_mut()
            .into_iter()
            .zip(optim.iter_mut())
            .zip(grads)
            .try_for_each(|((p, s), g)| s.step(p, g));
        self.optim = optim;
        result
    }

    /// Writes the checkpoint: magic, version, spec integers, then every
    /// parameter tensor as rank, dims and little-endian `f32` data.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + self.count_parameters() * 4);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        for v in self.spec.as_u32s().into_iter().chain([self.spec.n_classes]) {
            buf.extend_from_slice(&to_u32(v)?.to_le_bytes());
        }
        for p in self.params() {
            buf.extend_from_slice(&to_u32(p.shape().len())?.to_le_bytes());
            for &d in p.shape() {
                buf.extend_from_slice(&to_u32(d)?.to_le_bytes());
            }
            for &v in p.data() {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads a checkpoint. Optimizer state starts fresh.
    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_bytes(&bytes).map_err(|msg| Error::format(path, msg))
    }

    fn from_checkpoint_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err("bad magic bytes".into());
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(format!("unsupported checkpoint version {version}"));
        }
        let mut ints = [0usize; 8];
        for v in ints.iter_mut() {
            *v = r.u32()? as usize;
        }
        let spec = NetworkSpec {
            input_channels: ints[0],
            input_length: ints[1],
            conv1_filters: ints[2],
            conv2_filters: ints[3],
            kernel: ints[4],
            pool: ints[5],
            hidden_units: ints[6],
            n_classes: ints[7],
        };
        let chain = spec.shape_chain().map_err(|e| e.to_string())?;
        let expected: [Vec<usize>; 8] = [
            vec![spec.conv1_filters, spec.input_channels, spec.kernel],
            vec![spec.conv1_filters],
            vec![spec.conv2_filters, spec.conv1_filters, spec.kernel],
            vec![spec.conv2_filters],
            vec![spec.hidden_units, chain.flatten_width],
            vec![spec.hidden_units],
            vec![spec.n_classes, spec.hidden_units],
            vec![spec.n_classes],
        ];
        let mut tensors = Vec::with_capacity(8);
        for (name, want) in PARAM_NAMES.iter().zip(&expected) {
            let rank = r.u32()? as usize;
            if rank != want.len() {
                return Err(format!("{name}: rank {rank}, expected {}", want.len()));
            }
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            if &dims != want {
                return Err(format!("{name}: shape {dims:?}, expected {want:?}"));
            }
            let n: usize = dims.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            tensors.push(Tensor::from_vec(&dims, data).map_err(|e| e.to_string())?);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        let [w1, b1, w2, b2, wh, bh, wo, bo]: [Tensor; 8] =
            tensors.try_into().expect("eight tensors read");
        let build = || -> Result<Self> {
            Self::assemble(
                spec,
                Conv1d::new(w1, b1)?,
                Conv1d::new(w2, b2)?,
                Dense::new(wh, bh)?,
                Dense::new(wo, bo)?,
                RmsPropConfig::default(),
            )
        };
        build().map_err(|e| e.to_string())
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v)
        .map_err(|_| Error::contract(format!("{v} does not fit the checkpoint's u32 fields")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {} (wanted {n} more)", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
