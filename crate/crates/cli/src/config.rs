//! Layered run configuration: built-in defaults, then a config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use imu_cnn_array::arraytrain::{Arch, TrainConfig, DEFAULT_SEED};
use imu_cnn_array::lossoptim::LossMode;
use imu_cnn_array::synthgen::SynthConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchArg {
    Array,
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossArg {
    SumNormalized,
    Independent,
}

/// Flags shared by every command. Unset flags fall back to the config file, then defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Config file: flat TOML `key = value` lines, or a `run_config.json` echoed by an earlier run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for generation, splitting, initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [generate: defaults to the corpus directory; otherwise `runs`].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus directory [default: corpus].
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Training epochs [default: 50].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    pub batch: Option<usize>,
    /// RMSprop learning rate [default: 0.0001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Samples per window after resampling [default: 600].
    #[arg(long = "input-len")]
    pub input_len: Option<usize>,
    /// Network layout for `train` [default: array].
    #[arg(long, value_enum)]
    pub arch: Option<ArchArg>,
    /// Training loss [default: sum-normalized].
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Generator noise, as a fraction of mean burst amplitude [default: 0.05].
    #[arg(long)]
    pub noise: Option<f64>,
    /// Generator per-subject gain standard deviation [default: 0.1].
    #[arg(long = "gain-spread")]
    pub gain_spread: Option<f64>,
}

/// Keys accepted in a config file. `command` is written by the echo and ignored on input.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[allow(dead_code)]
    command: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    corpus: Option<PathBuf>,
    epochs: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    input_len: Option<usize>,
    arch: Option<ArchArg>,
    loss: Option<LossArg>,
    noise: Option<f64>,
    gain_spread: Option<f64>,
}

impl FileConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        } else {
            toml::from_str(&text).map_err(anyhow::Error::from)
        };
        parsed.with_context(|| format!("parsing config {}", path.display()))
    }
}

/// The effective configuration of one command, echoed as `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub out: PathBuf,
    pub corpus: PathBuf,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub input_len: usize,
    pub arch: ArchArg,
    pub loss: LossArg,
    pub noise: f64,
    pub gain_spread: f64,
}

impl RunConfig {
    pub fn resolve(command: &str, args: &CommonArgs) -> Result<Self> {
        let file = match &args.config {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        };
        let train = TrainConfig::default();
        let synth = SynthConfig::default();
        let corpus = args
            .corpus
            .clone()
            .or(file.corpus)
            .unwrap_or_else(|| "corpus".into());
        let out = args.out.clone().or(file.out).unwrap_or_else(|| {
            if command == "generate" {
                corpus.clone()
            } else {
                "runs".into()
            }
        });
        let cfg = Self {
            command: command.to_string(),
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            out,
            corpus,
            epochs: args.epochs.or(file.epochs).unwrap_or(train.epochs),
            batch: args.batch.or(file.batch).unwrap_or(train.batch_size),
            lr: args.lr.or(file.lr).unwrap_or(train.learning_rate),
            input_len: args
                .input_len
                .or(file.input_len)
                .unwrap_or(train.input_length),
            arch: args.arch.or(file.arch).unwrap_or(ArchArg::Array),
            loss: args.loss.or(file.loss).unwrap_or(LossArg::SumNormalized),
            noise: args.noise.or(file.noise).unwrap_or(synth.noise),
            gain_spread: args
                .gain_spread
                .or(file.gain_spread)
                .unwrap_or(synth.gain_spread),
        };
        if cfg.epochs == 0 || cfg.batch == 0 {
            bail!("--epochs and --batch must be at least 1");
        }
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch,
            learning_rate: self.lr,
            seed: self.seed,
            input_length: self.input_len,
            arch: match self.arch {
                ArchArg::Array => Arch::Array,
                ArchArg::Conventional => Arch::Conventional,
            },
            loss_mode: match self.loss {
                LossArg::SumNormalized => LossMode::SumNormalized,
                LossArg::Independent => LossMode::Independent,
            },
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            noise: self.noise,
            gain_spread: self.gain_spread,
            ..SynthConfig::default()
        }
    }

    pub fn write_echo(&self, dir: &Path) -> Result<()> {
        let path = dir.join("run_config.json");
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.toml");
        fs::write(&file, "epochs = 7\nbatch = 16\narch = \"conventional\"\n").unwrap();
        let args = CommonArgs {
            config: Some(file),
            batch: Some(8),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::resolve("train", &args).unwrap();
        assert_eq!(
            (cfg.epochs, cfg.batch, cfg.arch),
            (7, 8, ArchArg::Conventional)
        );
        assert_eq!(cfg.lr, 1e-4);
        assert_eq!(cfg.input_len, 600);
        assert_eq!(cfg.out, PathBuf::from("runs"));
        assert_eq!(cfg.seed, DEFAULT_SEED);
    }

    #[test]
    fn echo_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let args = CommonArgs {
            seed: Some(5),
            lr: Some(3e-4),
            loss: Some(LossArg::Independent),
            out: Some(dir.path().to_path_buf()),
            ..CommonArgs::default()
        };
        let cfg = RunConfig::resolve("compare", &args).unwrap();
        cfg.write_echo(dir.path()).unwrap();
        let again = RunConfig::resolve(
            "compare",
            &CommonArgs {
                config: Some(dir.path().join("run_config.json")),
                ..CommonArgs::default()
            },
        )
        .unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn generate_defaults_to_corpus_dir_and_unknown_keys_fail() {
        let cfg = RunConfig::resolve("generate", &CommonArgs::default()).unwrap();
        assert_eq!(cfg.out, PathBuf::from("corpus"));
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("bad.toml");
        fs::write(&file, "epoch = 3\n").unwrap();
        let args = CommonArgs {
            config: Some(file),
            ..CommonArgs::default()
        };
        assert!(RunConfig::resolve("train", &args).is_err());
    }
}
