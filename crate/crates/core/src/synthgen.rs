//! Deterministic synthetic signed-sentence corpus.
//!
//! Each sign is a fixed set of six Gaussian-windowed sinusoids, one per IMU
//! channel. A sentence concatenates 2 to 4 sign bursts of about one second,
//! separated by flat pauses of about one second. Subjects differ in gain,
//! sensor offset and mounting rotation, timing, and a per-sign style
//! perturbation, and every recording carries additive Gaussian sensor noise.
//!
//! All randomness is drawn from ChaCha8 streams whose seeds are hashes of
//! `(seed, role, ids...)`, so any sample can be regenerated on its own and the
//! corpus does not depend on generation order.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, ClassVocab, Context, Corpus, CorpusManifest, SampleEntry, SampleWindow, Split, CHANNELS,
    MANIFEST_VERSION, N_QUESTIONS, N_SENTENCES, SAMPLE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::keyed::stream;
use crate::tensor::Tensor;

pub const N_SUBJECTS: usize = 10;
pub const N_REPETITIONS: usize = 10;
/// Window length the generation-time separability check resamples to.
pub const ORACLE_LENGTH: usize = 600;
const GRAVITY: f64 = 9.81;

/// Generator knobs. The defaults produce a corpus that is learnable but not trivial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Noise standard deviation as a fraction of the mean burst amplitude of each channel.
    pub noise: f64,
    /// Standard deviation of the per-subject gain around 1.
    pub gain_spread: f64,
    /// Scale of per-subject, per-sign deviations in frequency, phase and amplitude.
    pub style: f64,
    /// Largest per-axis sensor mounting rotation, in degrees.
    pub rotation_deg: f64,
    /// Scale of per-repetition sign and pause duration jitter (1 gives +/-0.1 s and +/-0.2 s).
    pub timing_jitter: f64,
    /// Size of the sign primitive bank.
    pub n_signs: usize,
    /// Of the bank, how many signs may open a sentence (subjects).
    pub n_subject_signs: usize,
    /// Of the bank, how many signs are interrogatives; they close questions.
    pub n_question_signs: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            noise: 0.05,
            gain_spread: 0.1,
            style: 0.15,
            rotation_deg: 10.0,
            timing_jitter: 1.0,
            n_signs: 14,
            n_subject_signs: 5,
            n_question_signs: 4,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let finite = [
            self.noise,
            self.gain_spread,
            self.style,
            self.rotation_deg,
            self.timing_jitter,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::contract(
                "generator knobs must be finite and non-negative",
            ));
        }
        if self.timing_jitter > 1.0 {
            return Err(Error::contract("timing jitter scale must be at most 1"));
        }
        let plain = self.n_signs.saturating_sub(self.n_question_signs);
        if self.n_question_signs == 0 || self.n_subject_signs == 0 || self.n_subject_signs > plain {
            return Err(Error::contract(format!(
                "sign bank of {} cannot hold {} subject and {} question signs",
                self.n_signs, self.n_subject_signs, self.n_question_signs
            )));
        }
        Ok(())
    }
}

/// Burst parameters of one sign, per channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignPrimitive {
    pub freq_hz: [f64; CHANNELS],
    pub amplitude: [f64; CHANNELS],
    pub phase: [f64; CHANNELS],
    pub width_s: [f64; CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceTemplate {
    pub signs: Vec<usize>,
    pub context: Context,
    pub class_id: usize,
}

impl SentenceTemplate {
    pub fn label(&self) -> String {
        let prefix = match self.context {
            Context::Sentence => 'S',
            Context::Question => 'Q',
        };
        let signs: Vec<String> = self.signs.iter().map(usize::to_string).collect();
        format!("{prefix}{:02}:{}", self.class_id, signs.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub bank: Vec<SignPrimitive>,
    pub sentences: Vec<SentenceTemplate>,
    pub questions: Vec<SentenceTemplate>,
}

impl Vocabulary {
    pub fn template(&self, context: Context, class_id: usize) -> &SentenceTemplate {
        match context {
            Context::Sentence => &self.sentences[class_id],
            Context::Question => &self.questions[class_id],
        }
    }

    pub fn class_vocab(&self) -> ClassVocab {
        ClassVocab {
            sentences: self.sentences.iter().map(SentenceTemplate::label).collect(),
            questions: self.questions.iter().map(SentenceTemplate::label).collect(),
        }
    }

    /// Mean burst amplitude per channel over the bank.
    fn mean_amplitude(&self) -> [f64; CHANNELS] {
        let mut m = [0.0; CHANNELS];
        for p in &self.bank {
            for (acc, a) in m.iter_mut().zip(p.amplitude) {
                *acc += a;
            }
        }
        m.map(|v| v / self.bank.len() as f64)
    }
}

/// Per-sign deviations of one subject from the canonical primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignStyle {
    pub freq_scale: [f64; CHANNELS],
    pub phase_shift: [f64; CHANNELS],
    pub amplitude_scale: [f64; CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: usize,
    pub gain: f64,
    pub offset: [f64; CHANNELS],
    /// Multiplies the duration jitter of this subject's signs and pauses; in `[0.5, 1]`.
    pub jitter_scale: f64,
    /// Row-major 3x3 mounting rotation applied to both sensor triples.
    pub rotation: [[f64; 3]; 3],
    pub style: Vec<SignStyle>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn per_channel(f: impl FnMut(usize) -> f64) -> [f64; CHANNELS] {
    std::array::from_fn(f)
}

/// Draws the sign bank and the 12 sentence and 8 question templates.
pub fn generate_vocab(seed: u64, config: &SynthConfig) -> Result<Vocabulary> {
    config.validate()?;
    let mut rng = stream(seed, "vocab", &[]);
    let bank: Vec<SignPrimitive> = (0..config.n_signs)
        .map(|_| SignPrimitive {
            freq_hz: per_channel(|_| rng.random_range(0.5..3.0)),
            amplitude: per_channel(|c| {
                if c < 3 {
                    rng.random_range(1.0..5.0)
                } else {
                    rng.random_range(20.0..120.0)
                }
            }),
            phase: per_channel(|_| rng.random_range(0.0..std::f64::consts::TAU)),
            width_s: per_channel(|_| rng.random_range(0.10..0.16)),
        })
        .collect();

    let plain = config.n_signs - config.n_question_signs;
    let mut seen = std::collections::HashSet::new();
    let mut draw = |context: Context, class_id: usize, rng: &mut ChaCha8Rng| loop {
        let len = rng.random_range(2..=4usize);
        let mut signs = vec![rng.random_range(0..config.n_subject_signs)];
        let middle = if context == Context::Question {
            len - 2
        } else {
            len - 1
        };
        signs.extend((0..middle).map(|_| rng.random_range(0..plain)));
        if context == Context::Question {
            signs.push(rng.random_range(plain..config.n_signs));
        }
        if seen.insert(signs.clone()) {
            return SentenceTemplate {
                signs,
                context,
                class_id,
            };
        }
    };
    let sentences = (0..N_SENTENCES)
        .map(|i| draw(Context::Sentence, i, &mut rng))
        .collect();
    let questions = (0..N_QUESTIONS)
        .map(|i| draw(Context::Question, i, &mut rng))
        .collect();
    Ok(Vocabulary {
        bank,
        sentences,
        questions,
    })
}

fn rotation(rng: &mut ChaCha8Rng, max_deg: f64) -> [[f64; 3]; 3] {
    let a: [f64; 3] = std::array::from_fn(|_| max_deg.to_radians() * rng.random_range(-1.0..=1.0));
    let (sx, cx) = a[0].sin_cos();
    let (sy, cy) = a[1].sin_cos();
    let (sz, cz) = a[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    matmul3(&rz, &matmul3(&ry, &rx))
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn subject_profile(
    seed: u64,
    subject_id: usize,
    n_signs: usize,
    config: &SynthConfig,
) -> SubjectProfile {
    let mut rng = stream(seed, "subject", &[subject_id]);
    let gain = (1.0 + config.gain_spread * normal(&mut rng)).clamp(0.7, 1.3);
    let offset = per_channel(|c| match c {
        0 | 1 => 0.5 * normal(&mut rng),
        2 => GRAVITY + 0.5 * normal(&mut rng),
        _ => 2.0 * normal(&mut rng),
    });
    let jitter_scale = rng.random_range(0.5..=1.0);
    let rotation = rotation(&mut rng, config.rotation_deg);
    let s = config.style;
    let style = (0..n_signs)
        .map(|_| SignStyle {
            freq_scale: per_channel(|_| (1.0 + s * normal(&mut rng)).max(0.2)),
            phase_shift: per_channel(|_| s * std::f64::consts::PI * normal(&mut rng)),
            amplitude_scale: per_channel(|_| (1.0 + s * normal(&mut rng)).max(0.2)),
        })
        .collect();
    SubjectProfile {
        subject_id,
        gain,
        offset,
        jitter_scale,
        rotation,
        style,
    }
}

/// Raw `[6, L]` recording of one repetition at the native 100 Hz rate.
pub fn generate_recording(
    vocab: &Vocabulary,
    template: &SentenceTemplate,
    subject: &SubjectProfile,
    rep_rng: &mut ChaCha8Rng,
    config: &SynthConfig,
) -> Tensor {
    let fs = SAMPLE_RATE_HZ as f64;
    let jitter = config.timing_jitter * subject.jitter_scale;
    let mut channels: Vec<Vec<f64>> = vec![Vec::new(); CHANNELS];
    for (i, &sign) in template.signs.iter().enumerate() {
        let dur = 1.0 + rep_rng.random_range(-0.1..=0.1) * jitter;
        let n = (dur * fs).round() as usize;
        let center = dur / 2.0;
        let p = &vocab.bank[sign];
        let st = &subject.style[sign];
        for (c, ch) in channels.iter_mut().enumerate() {
            let amp = p.amplitude[c] * st.amplitude_scale[c];
            let freq = p.freq_hz[c] * st.freq_scale[c];
            let phase = p.phase[c] + st.phase_shift[c];
            ch.extend((0..n).map(|k| {
                let t = k as f64 / fs - center;
                amp * (-0.5 * (t / p.width_s[c]).powi(2)).exp()
                    * (std::f64::consts::TAU * freq * t + phase).sin()
            }));
        }
        if i + 1 < template.signs.len() {
            let pause = 1.0 + rep_rng.random_range(-0.2..=0.2) * jitter;
            let n = (pause * fs).round() as usize;
            for ch in channels.iter_mut() {
                ch.extend(std::iter::repeat_n(0.0, n));
            }
        }
    }

    let len = channels[0].len();
    let noise_sd = vocab.mean_amplitude().map(|a| config.noise * a);
    let r = &subject.rotation;
    let mut out = vec![0.0; CHANNELS * len];
    for t in 0..len {
        for triple in [0, 3] {
            let v: [f64; 3] = std::array::from_fn(|j| subject.gain * channels[triple + j][t]);
            for (i, row) in r.iter().enumerate() {
                let c = triple + i;
                let rotated = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
                out[c * len + t] = rotated + subject.offset[c];
            }
        }
    }
    if config.noise > 0.0 {
        for (c, row) in out.chunks_exact_mut(len).enumerate() {
            for v in row {
                *v += noise_sd[c] * normal(rep_rng);
            }
        }
    }
    Tensor::from_vec(&[CHANNELS, len], out).expect("shape matches data")
}

/// One repetition resampled to `input_length`.
pub fn generate_sample(
    vocab: &Vocabulary,
    template: &SentenceTemplate,
    subject: &SubjectProfile,
    rep_rng: &mut ChaCha8Rng,
    repetition: usize,
    config: &SynthConfig,
    input_length: usize,
) -> Result<SampleWindow> {
    let raw = generate_recording(vocab, template, subject, rep_rng, config);
    Ok(SampleWindow {
        signal: dataset::resample_to_length(&raw, input_length)?,
        class_id: template.class_id,
        context: template.context,
        subject_id: subject.subject_id,
        repetition,
    })
}

/// Random stream of one repetition; depends only on its keys.
pub fn repetition_stream(
    seed: u64,
    subject_id: usize,
    context: Context,
    class_id: usize,
    repetition: usize,
) -> ChaCha8Rng {
    stream(
        seed,
        "repetition",
        &[subject_id, context.global_offset() + class_id, repetition],
    )
}

/// Separability check run on every generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    /// Nearest-centroid accuracy over the 20 classes on a 90/10 stratified split.
    pub centroid_validation_accuracy: f64,
    pub validation_samples: usize,
    /// Mean distance between class centroids over mean sample-to-own-centroid distance.
    pub centroid_distance_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub seed: u64,
    pub config: SynthConfig,
    pub samples: usize,
    pub sentence_samples: usize,
    pub question_samples: usize,
    pub templates: Vec<SentenceTemplate>,
    pub separability: SeparabilityReport,
    pub corpus_sha256: String,
}

/// Nearest-class-centroid classification of flattened windows over the global class space.
pub fn centroid_separability(windows: &[SampleWindow], seed: u64) -> Result<SeparabilityReport> {
    let tags = dataset::stratified_split(windows, 0.9, seed)?;
    let dim = windows
        .first()
        .ok_or_else(|| Error::contract("separability check needs samples"))?
        .signal
        .len();
    let n_classes = dataset::N_CLASSES;
    let mut sums = vec![vec![0.0; dim]; n_classes];
    let mut counts = vec![0usize; n_classes];
    for (w, _) in windows
        .iter()
        .zip(&tags)
        .filter(|(_, t)| **t == Split::Train)
    {
        let k = w.global_class();
        counts[k] += 1;
        for (s, v) in sums[k].iter_mut().zip(w.signal.data()) {
            *s += v;
        }
    }
    let present: Vec<usize> = (0..n_classes).filter(|&k| counts[k] > 0).collect();
    for &k in &present {
        let n = counts[k] as f64;
        sums[k].iter_mut().for_each(|v| *v /= n);
    }
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };

    let (mut correct, mut total) = (0usize, 0usize);
    let (mut intra, mut n_intra) = (0.0, 0usize);
    for (w, tag) in windows.iter().zip(&tags) {
        let x = w.signal.data();
        if *tag == Split::Train {
            intra += dist(x, &sums[w.global_class()]);
            n_intra += 1;
            continue;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        for &k in &present {
            let d = dist(x, &sums[k]);
            if d < best.0 {
                best = (d, k);
            }
        }
        total += 1;
        correct += usize::from(best.1 == w.global_class());
    }
    let (mut inter, mut n_inter) = (0.0, 0usize);
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            inter += dist(&sums[a], &sums[b]);
            n_inter += 1;
        }
    }
    let intra_mean = intra / n_intra.max(1) as f64;
    Ok(SeparabilityReport {
        centroid_validation_accuracy: correct as f64 / total.max(1) as f64,
        validation_samples: total,
        centroid_distance_ratio: if intra_mean > 0.0 {
            (inter / n_inter.max(1) as f64) / intra_mean
        } else {
            f64::INFINITY
        },
    })
}

/// Writes the full 10 x 20 x 10 corpus, its manifest and `generation_report.json` into `out`.
pub fn generate_corpus(out: &Path, seed: u64, config: &SynthConfig) -> Result<GenerationReport> {
    let vocab = generate_vocab(seed, config)?;
    let samples_dir = out.join("samples");
    fs::create_dir_all(&samples_dir).map_err(|e| Error::io(&samples_dir, e))?;

    let mut entries = Vec::with_capacity(N_SUBJECTS * dataset::N_CLASSES * N_REPETITIONS);
    let mut windows = Vec::with_capacity(entries.capacity());
    for subject_id in 0..N_SUBJECTS {
        let subject = subject_profile(seed, subject_id, vocab.bank.len(), config);
        for template in vocab.sentences.iter().chain(&vocab.questions) {
            for repetition in 0..N_REPETITIONS {
                let mut rng = repetition_stream(
                    seed,
                    subject_id,
                    template.context,
                    template.class_id,
                    repetition,
                );
                let raw = generate_recording(&vocab, template, &subject, &mut rng, config);
                let ctx = match template.context {
                    Context::Sentence => "sentence",
                    Context::Question => "question",
                };
                let rel = format!(
                    "samples/subject{subject_id:02}_{ctx}{:02}_rep{repetition:02}.csv",
                    template.class_id
                );
                dataset::write_recording(&out.join(&rel), &raw)?;
                windows.push(SampleWindow {
                    signal: dataset::resample_to_length(&raw, ORACLE_LENGTH)?,
                    class_id: template.class_id,
                    context: template.context,
                    subject_id,
                    repetition,
                });
                entries.push(SampleEntry {
                    path: rel,
                    context: template.context,
                    class_id: template.class_id,
                    subject_id,
                    repetition,
                });
            }
        }
    }
    let manifest = CorpusManifest {
        version: MANIFEST_VERSION,
        sample_rate_hz: SAMPLE_RATE_HZ,
        vocab: vocab.class_vocab(),
        samples: entries,
        split_seed: None,
    };
    manifest.validate()?;
    manifest.write(&out.join("manifest.json"))?;

    let separability = centroid_separability(&windows, seed)?;
    let (sent, ques) = dataset::segregate(&manifest.samples);
    let report = GenerationReport {
        seed,
        config: *config,
        samples: manifest.samples.len(),
        sentence_samples: sent.len(),
        question_samples: ques.len(),
        templates: vocab
            .sentences
            .iter()
            .chain(&vocab.questions)
            .cloned()
            .collect(),
        separability,
        corpus_sha256: Corpus::content_hash(out)?,
    };
    let path = out.join("generation_report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
