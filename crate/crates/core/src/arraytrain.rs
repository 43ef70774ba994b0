//! Training of the two-member CNN array and the conventional baseline, the
//! per-epoch metric suite and the peak-performance report.
//!
//! Every epoch shuffles the training split, takes one RMSprop step per
//! mini-batch and then evaluates both splits in full. Accuracy is always
//! derived from the false-prediction count as `1 - fp / n`, so the identity
//! holds bit for bit in every log.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Context, Corpus, NormStats, SampleWindow, Split};
use crate::error::{Error, Result};
use crate::keyed;
use crate::lossoptim::{LossMode, RmsPropConfig};
use crate::netspec::{Model, NetworkSpec};
use crate::tensor::{argmax, Tensor};

pub const DEFAULT_SEED: u64 = 2024;
pub const SPLIT_FRACTION: f64 = 0.9;
const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// One network per context.
    #[default]
    Array,
    /// A single 20-class network.
    Conventional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub input_length: usize,
    pub arch: Arch,
    pub loss_mode: LossMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-4,
            seed: DEFAULT_SEED,
            input_length: 600,
            arch: Arch::Array,
            loss_mode: LossMode::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::contract("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::contract("batch size must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::contract(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        NetworkSpec::standard(dataset::N_CLASSES, self.input_length).shape_chain()?;
        Ok(())
    }

    fn optimizer(&self) -> RmsPropConfig {
        RmsPropConfig {
            lr: self.learning_rate,
            ..RmsPropConfig::default()
        }
    }
}

/// The three networks of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Member {
    Sentences,
    Questions,
    Conventional,
}

impl Member {
    pub const ALL: [Member; 3] = [Member::Sentences, Member::Questions, Member::Conventional];

    pub fn display_name(self) -> &'static str {
        match self {
            Member::Sentences => "CNN-sentences",
            Member::Questions => "CNN-questions",
            Member::Conventional => "CNN-conventional",
        }
    }

    /// File stem used for this member's outputs.
    pub fn stem(self) -> &'static str {
        match self {
            Member::Sentences => "sentences",
            Member::Questions => "questions",
            Member::Conventional => "conventional",
        }
    }

    pub fn n_classes(self) -> usize {
        match self {
            Member::Sentences => dataset::N_SENTENCES,
            Member::Questions => dataset::N_QUESTIONS,
            Member::Conventional => dataset::N_CLASSES,
        }
    }

    pub fn from_n_classes(n: usize) -> Result<Self> {
        Member::ALL
            .into_iter()
            .find(|m| m.n_classes() == n)
            .ok_or_else(|| Error::contract(format!("no network in the comparison has {n} classes")))
    }

    fn accepts(self, w: &SampleWindow) -> bool {
        match self {
            Member::Sentences => w.context == Context::Sentence,
            Member::Questions => w.context == Context::Question,
            Member::Conventional => true,
        }
    }

    fn label(self, w: &SampleWindow) -> usize {
        match self {
            Member::Conventional => w.global_class(),
            _ => w.class_id,
        }
    }

    /// Initialization seed, a function of the run seed and the member alone.
    fn init_seed(self, seed: u64) -> u64 {
        keyed::stream(seed, "init", &[self as usize]).random()
    }
}

/// Normalized inputs `[N, C, T]` stored flat, with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    channels: usize,
    length: usize,
}

impl LabeledSet {
    pub fn new(signals: &[Tensor], labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if signals.len() != labels.len() {
            return Err(Error::shape(format!(
                "{} signals but {} labels",
                signals.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::contract(format!(
                "label {bad} out of range for {n_classes} classes"
            )));
        }
        let (channels, length) = match signals.first() {
            Some(s) if s.shape().len() == 2 => (s.shape()[0], s.shape()[1]),
            Some(s) => {
                return Err(Error::shape(format!(
                    "signals must be [C, T], got {:?}",
                    s.shape()
                )))
            }
            None => (dataset::CHANNELS, 0),
        };
        let mut inputs = Vec::with_capacity(signals.len() * channels * length);
        for s in signals {
            if s.shape() != [channels, length] {
                return Err(Error::shape(format!(
                    "signal {:?} differs from [{channels}, {length}]",
                    s.shape()
                )));
            }
            inputs.extend_from_slice(s.data());
        }
        Ok(Self {
            inputs,
            labels,
            n_classes,
            channels,
            length,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Inputs `[B, C, T]` and one-hot targets `[B, K]` for the given rows.
    pub fn batch(&self, rows: &[usize]) -> Result<(Tensor, Tensor)> {
        let width = self.channels * self.length;
        let mut x = Vec::with_capacity(rows.len() * width);
        let mut y = vec![0.0; rows.len() * self.n_classes];
        for (i, &r) in rows.iter().enumerate() {
            x.extend_from_slice(&self.inputs[r * width..(r + 1) * width]);
            y[i * self.n_classes + self.labels[r]] = 1.0;
        }
        Ok((
            Tensor::from_vec(&[rows.len(), self.channels, self.length], x)?,
            Tensor::from_vec(&[rows.len(), self.n_classes], y)?,
        ))
    }
}

/// One member's data: its subset of the corpus, split and normalized.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub member: Member,
    pub train: LabeledSet,
    pub validation: LabeledSet,
    pub norm: NormStats,
}

/// The member's subset of the corpus, split 90/10 per class.
fn split_subset(
    corpus: &Corpus,
    member: Member,
    seed: u64,
) -> Result<(Vec<&SampleWindow>, Vec<&SampleWindow>)> {
    let subset: Vec<&SampleWindow> = corpus
        .windows
        .iter()
        .filter(|w| member.accepts(w))
        .collect();
    let tags = dataset::stratified_split(&subset, SPLIT_FRACTION, seed)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (w, t) in subset.into_iter().zip(tags) {
        match t {
            Split::Train => train.push(w),
            Split::Validation => val.push(w),
        }
    }
    Ok((train, val))
}

fn labeled(windows: &[&SampleWindow], member: Member, norm: &NormStats) -> Result<LabeledSet> {
    let signals = windows
        .iter()
        .map(|w| norm.apply(&w.signal))
        .collect::<Result<Vec<_>>>()?;
    let labels = windows.iter().map(|w| member.label(w)).collect();
    LabeledSet::new(&signals, labels, member.n_classes())
}

/// Selects the member's subset, splits it 90/10 per class and z-scores both
/// splits with statistics of the training split.
pub fn prepare(corpus: &Corpus, member: Member, seed: u64) -> Result<PreparedData> {
    let (train_w, val_w) = split_subset(corpus, member, seed)?;
    let norm = NormStats::fit(&train_w)?;
    Ok(PreparedData {
        member,
        train: labeled(&train_w, member, &norm)?,
        validation: labeled(&val_w, member, &norm)?,
        norm,
    })
}

/// Rows whose prediction argmax differs from the target argmax (ties go to the lowest index).
pub fn false_predictions(predictions: &Tensor, targets: &Tensor) -> Result<usize> {
    if predictions.shape() != targets.shape() || predictions.shape().len() != 2 {
        return Err(Error::shape(format!(
            "predictions {:?} and targets {:?} must both be [B, K]",
            predictions.shape(),
            targets.shape()
        )));
    }
    let b = predictions.shape()[0];
    Ok((0..b)
        .filter(|&i| argmax(predictions.row(i)) != argmax(targets.row(i)))
        .count())
}

/// `1 - fp / n`, the only way accuracy is ever computed.
pub fn accuracy(false_predictions: usize, n: usize) -> f64 {
    1.0 - false_predictions as f64 / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub loss: f64,
    pub accuracy: f64,
    pub false_predictions: usize,
    pub samples: usize,
}

/// Mean loss, accuracy and false predictions over a whole split, in fixed batch order.
pub fn evaluate(model: &Model, set: &LabeledSet) -> Result<EvalMetrics> {
    if set.is_empty() {
        return Err(Error::contract("cannot evaluate an empty split"));
    }
    if set.n_classes() != model.n_classes() {
        return Err(Error::contract(format!(
            "model has {} classes, data has {}",
            model.n_classes(),
            set.n_classes()
        )));
    }
    let mode = model.loss_mode();
    let rows: Vec<usize> = (0..set.len()).collect();
    let (mut loss, mut fp) = (0.0, 0usize);
    for chunk in rows.chunks(EVAL_BATCH) {
        let (x, y) = set.batch(chunk)?;
        let q = model.forward(&x)?;
        for i in 0..chunk.len() {
            loss += mode.sample_loss(y.row(i), q.row(i))?;
        }
        fp += false_predictions(&q, &y)?;
    }
    Ok(EvalMetrics {
        loss: loss / set.len() as f64,
        accuracy: accuracy(fp, set.len()),
        false_predictions: fp,
        samples: set.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub train_fp: usize,
    pub val_loss: f64,
    pub val_acc: f64,
    pub val_fp: usize,
}

pub const METRICS_HEADER: &str = "epoch,train_loss,train_acc,train_fp,val_loss,val_acc,val_fp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub model: String,
    pub n_train: usize,
    pub n_val: usize,
    pub epochs: Vec<EpochMetrics>,
    /// Epoch (1-based) with the lowest validation loss; its weights are the kept checkpoint.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(METRICS_HEADER);
        out.push('\n');
        for m in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.epoch, m.train_loss, m.train_acc, m.train_fp, m.val_loss, m.val_acc, m.val_fp
            )
            .expect("write to string");
        }
        out
    }

    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Result of training one network.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: TrainingLog,
    /// Weights at [`TrainingLog::best_epoch`].
    pub best: Model,
}

/// Trains `model` in place for `config.epochs` epochs. `key` names the
/// shuffle stream, so runs under different keys are independent.
pub fn train(
    model: &mut Model,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    config: &TrainConfig,
    key: Member,
    observer: &mut dyn FnMut(Member, &EpochMetrics),
) -> Result<TrainOutcome> {
    config.validate()?;
    for set in [train_set, val_set] {
        if set.n_classes() != model.n_classes() {
            return Err(Error::contract(format!(
                "model has {} classes, data has {}",
                model.n_classes(),
                set.n_classes()
            )));
        }
    }
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::contract(
            "training and validation splits must be non-empty",
        ));
    }
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        let mut rng = keyed::stream(config.seed, "shuffle", &[key as usize, epoch]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for rows in order.chunks(config.batch_size) {
            let (x, y) = train_set.batch(rows)?;
            model.backward_and_step(&x, &y)?;
        }
        let t = evaluate(model, train_set)?;
        let v = evaluate(model, val_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: t.loss,
            train_acc: t.accuracy,
            train_fp: t.false_predictions,
            val_loss: v.loss,
            val_acc: v.accuracy,
            val_fp: v.false_predictions,
        };
        observer(key, &m);
        if best.as_ref().is_none_or(|(loss, _, _)| v.loss < *loss) {
            best = Some((v.loss, epoch, model.clone()));
        }
        epochs.push(m);
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        log: TrainingLog {
            model: key.display_name().to_string(),
            n_train: train_set.len(),
            n_val: val_set.len(),
            epochs,
            best_epoch,
        },
        best,
    })
}

/// A trained network with the normalization its inputs need.
#[derive(Debug, Clone)]
pub struct TrainedNet {
    pub member: Member,
    pub model: Model,
    pub norm: NormStats,
}

impl TrainedNet {
    /// Likelihoods for one raw (unnormalized) `[6, T]` window.
    pub fn predict(&self, signal: &Tensor) -> Result<Tensor> {
        let x = self.norm.apply(signal)?;
        let s = x.shape().to_vec();
        let q = self.model.forward(&x.into_reshape(&[1, s[0], s[1]])?)?;
        q.into_reshape(&[self.model.n_classes()])
    }

    pub fn checkpoint_path(out: &Path, member: Member) -> PathBuf {
        out.join(format!("{}.ckpt", member.stem()))
    }

    /// Normalization statistics live beside the checkpoint.
    pub fn norm_path(checkpoint: &Path) -> PathBuf {
        checkpoint.with_extension("norm.json")
    }

    pub fn save(&self, out: &Path) -> Result<PathBuf> {
        let path = Self::checkpoint_path(out, self.member);
        self.model.save_checkpoint(&path)?;
        self.norm.save(&Self::norm_path(&path))?;
        Ok(path)
    }

    pub fn load(checkpoint: &Path) -> Result<Self> {
        let model = Model::load_checkpoint(checkpoint)?;
        let norm = NormStats::load(&Self::norm_path(checkpoint))?;
        Ok(Self {
            member: Member::from_n_classes(model.n_classes())?,
            model,
            norm,
        })
    }
}

#[derive(Debug, Clone)]
pub struct MemberRun {
    pub net: TrainedNet,
    pub log: TrainingLog,
}

impl MemberRun {
    /// Writes `<stem>_metrics.csv`, `<stem>.ckpt` and `<stem>.norm.json`.
    pub fn save(&self, out: &Path) -> Result<()> {
        let csv = out.join(format!("{}_metrics.csv", self.net.member.stem()));
        fs::write(&csv, self.log.to_csv()).map_err(|e| Error::io(&csv, e))?;
        self.net.save(out)?;
        Ok(())
    }
}

/// Prepares and trains one member from scratch.
pub fn train_member(
    corpus: &Corpus,
    member: Member,
    config: &TrainConfig,
    observer: &mut dyn FnMut(Member, &EpochMetrics),
) -> Result<MemberRun> {
    config.validate()?;
    if corpus.input_length != config.input_length {
        return Err(Error::contract(format!(
            "corpus loaded at T = {}, config asks for {}",
            corpus.input_length, config.input_length
        )));
    }
    let data = prepare(corpus, member, config.seed)?;
    let spec = NetworkSpec::standard(member.n_classes(), config.input_length);
    let mut model = Model::build_with(spec, member.init_seed(config.seed), config.optimizer())?;
    model.set_loss_mode(config.loss_mode);
    let outcome = train(
        &mut model,
        &data.train,
        &data.validation,
        config,
        member,
        observer,
    )?;
    Ok(MemberRun {
        net: TrainedNet {
            member,
            model: outcome.best,
            norm: data.norm,
        },
        log: outcome.log,
    })
}

/// The array: one network per context, chosen by the sample's context tag.
#[derive(Debug, Clone)]
pub struct ArrayModel {
    pub sentences: TrainedNet,
    pub questions: TrainedNet,
}

/// Trains the sentence and question networks independently on their own subsets.
pub fn train_array(
    corpus: &Corpus,
    config: &TrainConfig,
    observer: &mut dyn FnMut(Member, &EpochMetrics),
) -> Result<(ArrayModel, [TrainingLog; 2])> {
    let s = train_member(corpus, Member::Sentences, config, observer)?;
    let q = train_member(corpus, Member::Questions, config, observer)?;
    Ok((
        ArrayModel {
            sentences: s.net,
            questions: q.net,
        },
        [s.log, q.log],
    ))
}

/// Routes by context and returns the member's class (within that context) and likelihoods.
pub fn classify_array(array: &ArrayModel, sample: &SampleWindow) -> Result<(usize, Tensor)> {
    let net = match sample.context {
        Context::Sentence => &array.sentences,
        Context::Question => &array.questions,
    };
    let q = net.predict(&sample.signal)?;
    Ok((argmax(q.data()), q))
}

/// Extrema of one network's epoch series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakRow {
    pub model: String,
    pub n_train: usize,
    pub n_val: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_fp: usize,
    pub val_fp: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub best_epoch: usize,
    pub final_epoch: EpochMetrics,
}

impl PeakRow {
    pub fn from_log(log: &TrainingLog) -> Result<Self> {
        let e = &log.epochs;
        let last = *e
            .last()
            .ok_or_else(|| Error::contract("empty training log"))?;
        let min_f = |f: fn(&EpochMetrics) -> f64| e.iter().map(f).fold(f64::INFINITY, f64::min);
        let max_f = |f: fn(&EpochMetrics) -> f64| e.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        let min_u = |f: fn(&EpochMetrics) -> usize| e.iter().map(f).min().expect("non-empty");
        Ok(Self {
            model: log.model.clone(),
            n_train: log.n_train,
            n_val: log.n_val,
            train_loss: min_f(|m| m.train_loss),
            val_loss: min_f(|m| m.val_loss),
            train_fp: min_u(|m| m.train_fp),
            val_fp: min_u(|m| m.val_fp),
            train_acc: max_f(|m| m.train_acc),
            val_acc: max_f(|m| m.val_acc),
            best_epoch: log.best_epoch,
            final_epoch: last,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityAudit {
    pub checked_epochs: usize,
    pub violations: Vec<String>,
    pub passed: bool,
}

/// Checks `acc == 1 - fp / n` bit for bit on every epoch of every log.
pub fn audit_identity(logs: &[&TrainingLog]) -> IdentityAudit {
    let mut violations = Vec::new();
    let mut checked = 0;
    for log in logs {
        for m in &log.epochs {
            checked += 1;
            for (split, acc, fp, n) in [
                ("train", m.train_acc, m.train_fp, log.n_train),
                ("val", m.val_acc, m.val_fp, log.n_val),
            ] {
                if acc.to_bits() != accuracy(fp, n).to_bits() {
                    violations.push(format!(
                        "{} epoch {} {split}: acc {acc} but {fp} false of {n}",
                        log.model, m.epoch
                    ));
                }
            }
        }
    }
    IdentityAudit {
        checked_epochs: checked,
        passed: violations.is_empty(),
        violations,
    }
}

/// A published (false predictions, set size, accuracy %) triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub label: &'static str,
    pub false_predictions: usize,
    pub samples: usize,
    pub reported_percent: f64,
}

impl ReferenceRow {
    pub fn computed_percent(&self) -> f64 {
        100.0 * accuracy(self.false_predictions, self.samples)
    }

    /// Consistent when the reported figure is the computed one cut to two decimals.
    pub fn consistent(&self) -> bool {
        let gap = self.computed_percent() - self.reported_percent;
        (-1e-9..0.01).contains(&gap)
    }
}

/// Peak training rows of the reference results, each consistent with the identity.
pub const REFERENCE_TRAINING_ROWS: [ReferenceRow; 3] = [
    ReferenceRow {
        label: "CNN-sentences train",
        false_predictions: 17,
        samples: 1080,
        reported_percent: 98.42,
    },
    ReferenceRow {
        label: "CNN-questions train",
        false_predictions: 5,
        samples: 720,
        reported_percent: 99.30,
    },
    ReferenceRow {
        label: "CNN-conventional train",
        false_predictions: 33,
        samples: 1800,
        reported_percent: 98.16,
    },
];

/// A reference row that does not satisfy the identity (12 of 200 is 94.00%).
pub const INCONSISTENT_REFERENCE_ROW: ReferenceRow = ReferenceRow {
    label: "CNN-conventional validation",
    false_predictions: 12,
    samples: 200,
    reported_percent: 93.50,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    pub seed: u64,
    pub epochs: usize,
    pub input_length: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss_mode: LossMode,
    pub models: Vec<PeakRow>,
    pub identity_audit: IdentityAudit,
}

impl PeakReport {
    pub fn new(config: &TrainConfig, logs: &[&TrainingLog]) -> Result<Self> {
        Ok(Self {
            seed: config.seed,
            epochs: config.epochs,
            input_length: config.input_length,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            loss_mode: config.loss_mode,
            models: logs
                .iter()
                .map(|l| PeakRow::from_log(l))
                .collect::<Result<_>>()?,
            identity_audit: audit_identity(logs),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// Plain-text table: peaks over all epochs, then final-epoch values.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let header = format!(
            "{:<18} {:>11} {:>11} {:>9} {:>7} {:>10} {:>10}",
            "Model", "Train loss", "Val loss", "Train FP", "Val FP", "Train acc%", "Val acc%"
        );
        let rule = "-".repeat(header.len());
        let row = |out: &mut String,
                   name: &str,
                   tl: f64,
                   vl: f64,
                   tf: usize,
                   vf: usize,
                   ta: f64,
                   va: f64| {
            writeln!(
                out,
                "{name:<18} {tl:>11.4} {vl:>11.4} {tf:>9} {vf:>7} {:>10.2} {:>10.2}",
                100.0 * ta,
                100.0 * va
            )
            .expect("write to string");
        };
        writeln!(
            out,
            "Peak performance over {} epochs (T = {}, batch {}, lr {}, seed {})",
            self.epochs, self.input_length, self.batch_size, self.learning_rate, self.seed
        )
        .expect("write to string");
        writeln!(out, "{header}\n{rule}").expect("write to string");
        for m in &self.models {
            row(
                &mut out,
                &m.model,
                m.train_loss,
                m.val_loss,
                m.train_fp,
                m.val_fp,
                m.train_acc,
                m.val_acc,
            );
        }
        writeln!(out, "\nFinal epoch\n{header}\n{rule}").expect("write to string");
        for m in &self.models {
            let f = &m.final_epoch;
            row(
                &mut out,
                &m.model,
                f.train_loss,
                f.val_loss,
                f.train_fp,
                f.val_fp,
                f.train_acc,
                f.val_acc,
            );
        }
        writeln!(
            out,
            "\nIdentity audit (acc = 1 - fp/n): {} over {} epochs",
            if self.identity_audit.passed {
                "passed"
            } else {
                "FAILED"
            },
            self.identity_audit.checked_epochs
        )
        .expect("write to string");
        out
    }

    /// Writes `peak_report.json` and `peak_report.txt`.
    pub fn save(&self, out: &Path) -> Result<()> {
        for (name, text) in [
            ("peak_report.json", self.to_json()),
            ("peak_report.txt", self.render_table()),
        ] {
            let path = out.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub report: PeakReport,
    pub runs: Vec<MemberRun>,
}

/// Trains all three networks and builds the peak report.
pub fn compare_report(
    corpus: &Corpus,
    config: &TrainConfig,
    observer: &mut dyn FnMut(Member, &EpochMetrics),
) -> Result<Comparison> {
    let runs = Member::ALL
        .into_iter()
        .map(|m| train_member(corpus, m, config, observer))
        .collect::<Result<Vec<_>>>()?;
    let logs: Vec<&TrainingLog> = runs.iter().map(|r| &r.log).collect();
    let report = PeakReport::new(config, &logs)?;
    Ok(Comparison { report, runs })
}

/// Metrics of a saved checkpoint on one split, with its split recomputed from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub model: String,
    pub split: Split,
    pub seed: u64,
    pub input_length: usize,
    #[serde(flatten)]
    pub metrics: EvalMetrics,
}

pub fn evaluate_checkpoint(
    checkpoint: &Path,
    corpus_root: &Path,
    split: Split,
    seed: u64,
) -> Result<CheckpointEval> {
    let net = TrainedNet::load(checkpoint)?;
    let input_length = net.model.spec().input_length;
    let corpus = Corpus::load(corpus_root, input_length)?;
    let (train_w, val_w) = split_subset(&corpus, net.member, seed)?;
    let windows = match split {
        Split::Train => train_w,
        Split::Validation => val_w,
    };
    let set = labeled(&windows, net.member, &net.norm)?;
    Ok(CheckpointEval {
        model: net.member.display_name().to_string(),
        split,
        seed,
        input_length,
        metrics: evaluate(&net.model, &set)?,
    })
}
