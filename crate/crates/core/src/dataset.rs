//! Corpus data model, file formats and preprocessing.
//!
//! A corpus is a directory holding `manifest.json` plus one CSV per signed
//! sentence. Each CSV has the header `t,ax,ay,az,gx,gy,gz` and one row per
//! 100 Hz tick: accelerations in m/s^2, then turn rates in deg/s.
//!
//! Recordings vary in length; [`resample_to_length`] maps every recording onto
//! a common window of `T` samples by linear interpolation.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keyed;
use crate::tensor::Tensor;

pub const CHANNELS: usize = 6;
pub const SAMPLE_RATE_HZ: u32 = 100;
pub const MANIFEST_VERSION: u32 = 1;
pub const N_SENTENCES: usize = 12;
pub const N_QUESTIONS: usize = 8;
pub const N_CLASSES: usize = N_SENTENCES + N_QUESTIONS;
pub const CSV_HEADER: [&str; 7] = ["t", "ax", "ay", "az", "gx", "gy", "gz"];
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Sentence,
    Question,
}

impl Context {
    pub fn n_classes(self) -> usize {
        match self {
            Context::Sentence => N_SENTENCES,
            Context::Question => N_QUESTIONS,
        }
    }

    /// Offset of this context's classes in the unsegregated 20-class label space.
    pub fn global_offset(self) -> usize {
        match self {
            Context::Sentence => 0,
            Context::Question => N_SENTENCES,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassVocab {
    pub sentences: Vec<String>,
    pub questions: Vec<String>,
}

impl ClassVocab {
    pub fn labels(&self, context: Context) -> &[String] {
        match context {
            Context::Sentence => &self.sentences,
            Context::Question => &self.questions,
        }
    }

    fn validate(&self) -> Result<()> {
        for (ctx, want) in [
            (Context::Sentence, N_SENTENCES),
            (Context::Question, N_QUESTIONS),
        ] {
            let labels = self.labels(ctx);
            if labels.len() != want {
                return Err(Error::Integrity(format!(
                    "{ctx:?} vocabulary has {} labels, expected {want}",
                    labels.len()
                )));
            }
            let unique: HashSet<&String> = labels.iter().collect();
            if unique.len() != labels.len() {
                return Err(Error::Integrity(format!(
                    "{ctx:?} vocabulary has duplicate labels"
                )));
            }
        }
        Ok(())
    }
}

/// One manifest row. `path` is relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub path: String,
    pub context: Context,
    pub class_id: usize,
    pub subject_id: usize,
    pub repetition: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub version: u32,
    pub sample_rate_hz: u32,
    pub vocab: ClassVocab,
    pub samples: Vec<SampleEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_seed: Option<u64>,
}

impl CorpusManifest {
    /// Checks vocabulary, label ranges and uniqueness of (context, class, subject, repetition).
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Integrity(format!(
                "manifest version {} is not {MANIFEST_VERSION}",
                self.version
            )));
        }
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::Integrity(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE_HZ}",
                self.sample_rate_hz
            )));
        }
        self.vocab.validate()?;
        let mut seen = HashSet::new();
        for s in &self.samples {
            if s.class_id >= s.context.n_classes() {
                return Err(Error::Integrity(format!(
                    "{}: class {} out of range for {:?}",
                    s.path, s.class_id, s.context
                )));
            }
            if !seen.insert((s.context, s.class_id, s.subject_id, s.repetition)) {
                return Err(Error::Integrity(format!(
                    "duplicate sample {:?} class {} subject {} repetition {}",
                    s.context, s.class_id, s.subject_id, s.repetition
                )));
            }
        }
        Ok(())
    }

    /// Every referenced sample file must exist under `root`.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        let missing: Vec<&str> = self
            .samples
            .iter()
            .filter(|s| !root.join(&s.path).is_file())
            .map(|s| s.path.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Integrity(format!(
                "{} sample file(s) missing, first: {}",
                missing.len(),
                missing[0]
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CorpusManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

/// One signed sentence, already resampled to the corpus window length.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWindow {
    /// `[6, T]`
    pub signal: Tensor,
    pub class_id: usize,
    pub context: Context,
    pub subject_id: usize,
    pub repetition: usize,
}

impl SampleWindow {
    /// Label in the unsegregated 20-class space.
    pub fn global_class(&self) -> usize {
        self.context.global_offset() + self.class_id
    }
}

/// Reads a raw recording as a `[6, L]` tensor.
pub fn read_recording(path: &Path) -> Result<Tensor> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(
            path,
            format!("header {:?}, expected {}", header, CSV_HEADER.join(",")),
        ));
    }
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != CSV_HEADER.len() {
            return Err(Error::format(
                path,
                format!(
                    "row {} has {} columns, expected {}",
                    row + 2,
                    record.len(),
                    CSV_HEADER.len()
                ),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::format(
                    path,
                    format!("row {} column {}: {cell:?} is not a number", row + 2, c + 1),
                )
            })?;
            if c > 0 {
                channels[c - 1].push(v);
            }
        }
    }
    let len = channels[0].len();
    if len == 0 {
        return Err(Error::format(path, "no data rows"));
    }
    Tensor::from_vec(&[CHANNELS, len], channels.concat())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

/// Writes a `[6, L]` recording with a `t` column at the 100 Hz tick.
pub fn write_recording(path: &Path, signal: &Tensor) -> Result<()> {
    let s = signal.shape();
    if s.len() != 2 || s[0] != CHANNELS {
        return Err(Error::shape(format!("recording must be [6, L], got {s:?}")));
    }
    let len = s[1];
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::with_capacity(len * 64));
    w.write_record(CSV_HEADER).expect("in-memory write");
    let mut row: Vec<String> = Vec::with_capacity(7);
    for t in 0..len {
        row.clear();
        row.push(format!("{:.2}", t as f64 / SAMPLE_RATE_HZ as f64));
        for c in 0..CHANNELS {
            row.push(format!("{:.5}", signal.data()[c * len + t]));
        }
        w.write_record(&row).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("in-memory flush");
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads one CSV and resamples it to `expected_len` samples.
pub fn load_sample(path: &Path, expected_len: usize) -> Result<Tensor> {
    resample_to_length(&read_recording(path)?, expected_len)
}

/// Per-channel linear interpolation onto `len` points; output index `i` reads
/// source position `i * (L - 1) / (len - 1)`, so both endpoints are kept exactly.
pub fn resample_to_length(signal: &Tensor, len: usize) -> Result<Tensor> {
    let s = signal.shape();
    if s.len() != 2 {
        return Err(Error::shape(format!("expected [C, L], got {s:?}")));
    }
    let (channels, src_len) = (s[0], s[1]);
    if src_len < 2 || len < 2 {
        return Err(Error::contract(format!(
            "resampling needs at least 2 points on both sides ({src_len} -> {len})"
        )));
    }
    if src_len == len {
        return Ok(signal.clone());
    }
    let mut out = Vec::with_capacity(channels * len);
    let scale = (src_len - 1) as f64 / (len - 1) as f64;
    for row in signal.data().chunks_exact(src_len) {
        for i in 0..len {
            if i == len - 1 {
                out.push(row[src_len - 1]);
                continue;
            }
            let pos = i as f64 * scale;
            let lo = (pos.floor() as usize).min(src_len - 2);
            let frac = pos - lo as f64;
            out.push(row[lo] + frac * (row[lo + 1] - row[lo]));
        }
    }
    Tensor::from_vec(&[channels, len], out)
}

/// Per-channel mean and standard deviation, fitted on training samples only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn fit(train: &[&SampleWindow]) -> Result<Self> {
        let first = train.first().ok_or_else(|| {
            Error::contract("cannot fit normalization on an empty training split")
        })?;
        let channels = first.signal.shape()[0];
        let mut mean = Vec::with_capacity(channels);
        let mut std = Vec::with_capacity(channels);
        for c in 0..channels {
            // Shift by the first value so constant channels give an exact mean.
            let shift = first.signal.row(c)[0];
            let mut n = 0usize;
            let mut sum = 0.0;
            for w in train {
                for &v in w.signal.row(c) {
                    sum += v - shift;
                    n += 1;
                }
            }
            let m = sum / n as f64;
            let mut sq = 0.0;
            for w in train {
                for &v in w.signal.row(c) {
                    let d = v - shift - m;
                    sq += d * d;
                }
            }
            mean.push(shift + m);
            std.push((sq / n as f64).sqrt().max(STD_FLOOR));
        }
        Ok(Self { mean, std })
    }

    /// `(x - mean) / std` per channel.
    pub fn apply(&self, signal: &Tensor) -> Result<Tensor> {
        let s = signal.shape();
        if s.len() != 2 || s[0] != self.mean.len() {
            return Err(Error::shape(format!(
                "normalization fitted on {} channels, signal is {s:?}",
                self.mean.len()
            )));
        }
        let mut out = signal.clone();
        let len = s[1];
        for (c, row) in out.data_mut().chunks_exact_mut(len).enumerate() {
            let (m, sd) = (self.mean[c], self.std[c]);
            for v in row {
                *v = (*v - m) / sd;
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("stats serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Normalizes training and validation windows with statistics fitted on the
/// training windows alone.
pub fn zscore_normalize(
    train: &[&SampleWindow],
    validation: &[&SampleWindow],
) -> Result<(Vec<Tensor>, Vec<Tensor>, NormStats)> {
    let stats = NormStats::fit(train)?;
    let apply = |ws: &[&SampleWindow]| -> Result<Vec<Tensor>> {
        ws.iter().map(|w| stats.apply(&w.signal)).collect()
    };
    Ok((apply(train)?, apply(validation)?, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

/// Anything carrying the keys the split is stratified on.
pub trait Labeled {
    fn context(&self) -> Context;
    fn class_id(&self) -> usize;
    fn subject_id(&self) -> usize;
    fn repetition(&self) -> usize;
}

impl Labeled for SampleEntry {
    fn context(&self) -> Context {
        self.context
    }
    fn class_id(&self) -> usize {
        self.class_id
    }
    fn subject_id(&self) -> usize {
        self.subject_id
    }
    fn repetition(&self) -> usize {
        self.repetition
    }
}

impl Labeled for SampleWindow {
    fn context(&self) -> Context {
        self.context
    }
    fn class_id(&self) -> usize {
        self.class_id
    }
    fn subject_id(&self) -> usize {
        self.subject_id
    }
    fn repetition(&self) -> usize {
        self.repetition
    }
}

impl<T: Labeled + ?Sized> Labeled for &T {
    fn context(&self) -> Context {
        (**self).context()
    }
    fn class_id(&self) -> usize {
        (**self).class_id()
    }
    fn subject_id(&self) -> usize {
        (**self).subject_id()
    }
    fn repetition(&self) -> usize {
        (**self).repetition()
    }
}

/// Per-(context, class) split: each group is put in (subject, repetition)
/// order, shuffled by a generator keyed on `(seed, context, class)`, and its
/// first `floor(fraction * n)` members go to training.
///
/// Because the shuffle of a group depends only on that group, a subset of the
/// corpus receives exactly the tags it would receive as part of the whole.
pub fn stratified_split<T: Labeled>(samples: &[T], fraction: f64, seed: u64) -> Result<Vec<Split>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::contract(format!(
            "split fraction {fraction} outside [0, 1]"
        )));
    }
    let mut groups: BTreeMap<(Context, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        groups
            .entry((s.context(), s.class_id()))
            .or_default()
            .push(i);
    }
    let mut tags = vec![Split::Validation; samples.len()];
    for ((context, class_id), mut idx) in groups {
        if idx.len() < 2 {
            return Err(Error::contract(format!(
                "{context:?} class {class_id} has {} sample(s); a split needs at least 2",
                idx.len()
            )));
        }
        idx.sort_by_key(|&i| (samples[i].subject_id(), samples[i].repetition(), i));
        let mut rng = keyed::stream(seed, "stratified-split", &[context as usize, class_id]);
        idx.shuffle(&mut rng);
        // The epsilon keeps products like 0.9 * 10 from rounding below the integer.
        let n_train = ((idx.len() as f64) * fraction + 1e-9).floor() as usize;
        for &i in &idx[..n_train] {
            tags[i] = Split::Train;
        }
    }
    Ok(tags)
}

/// Partitions samples by context tag into (sentences, questions).
pub fn segregate<T: Labeled>(samples: &[T]) -> (Vec<&T>, Vec<&T>) {
    samples
        .iter()
        .partition(|s| s.context() == Context::Sentence)
}

/// A manifest together with every sample loaded at a fixed window length.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub windows: Vec<SampleWindow>,
    pub input_length: usize,
}

impl Corpus {
    pub fn load(root: &Path, input_length: usize) -> Result<Self> {
        let manifest = load_manifest(&root.join("manifest.json"))?;
        manifest.validate_files(root)?;
        let windows = manifest
            .samples
            .iter()
            .map(|e| {
                Ok(SampleWindow {
                    signal: load_sample(&root.join(&e.path), input_length)?,
                    class_id: e.class_id,
                    context: e.context,
                    subject_id: e.subject_id,
                    repetition: e.repetition,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
            windows,
            input_length,
        })
    }

    /// SHA-256 over the manifest and every sample file, in manifest order.
    pub fn content_hash(root: &Path) -> Result<String> {
        let manifest_path = root.join("manifest.json");
        let manifest = load_manifest(&manifest_path)?;
        let mut h = Sha256::new();
        h.update(fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?);
        for s in &manifest.samples {
            let p = root.join(&s.path);
            h.update(s.path.as_bytes());
            h.update(fs::read(&p).map_err(|e| Error::io(&p, e))?);
        }
        Ok(hex(&h.finalize()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
