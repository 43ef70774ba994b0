//! `cnn-array`: generate a synthetic corpus, train the CNN array or the
//! conventional baseline, evaluate checkpoints, run the three-way comparison
//! and verify gradients.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use imu_cnn_array::arraytrain::{self, Arch, EpochMetrics, Member};
use imu_cnn_array::dataset::{Corpus, Split};
use imu_cnn_array::gradcheck::{self, GradcheckOptions};
use imu_cnn_array::synthgen;

use crate::config::{CommonArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "cnn-array",
    version,
    about = "1D CNN array for IMU signed-sentence recognition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus (2000 CSV recordings + manifest + generation report).
    Generate(CommonArgs),
    /// Train the array (two networks) or the conventional 20-class network.
    Train(CommonArgs),
    /// Evaluate a checkpoint on one split and print the metrics as JSON.
    Eval(EvalArgs),
    /// Train all three networks and write the peak-performance report.
    Compare(CommonArgs),
    /// Check every backward pass against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Validation,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint written by `train` or `compare`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "validation")]
    split: SplitArg,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Scale analytic gradients by (1 + x); a negative control for the checker.
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_gradient: f64,
}

fn main() -> ExitCode {
    keep_heap_resident();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Keeps large freed buffers on the process heap instead of unmapping them.
#[cfg(all(target_os = "linux", target_env = "gnu"))]
fn keep_heap_resident() {
    const MMAP_THRESHOLD: i32 = 32 * 1024 * 1024;
    const RETAINED: i32 = 256 * 1024 * 1024;
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, MMAP_THRESHOLD);
        libc::mallopt(libc::M_TRIM_THRESHOLD, RETAINED);
        libc::mallopt(libc::M_TOP_PAD, 16 * 1024 * 1024);
    }
}

#[cfg(not(all(target_os = "linux", target_env = "gnu")))]
fn keep_heap_resident() {}

/// Returns whether every audit passed.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Generate(a) => cmd_generate(&RunConfig::resolve("generate", &a)?),
        Command::Train(a) => cmd_train(&RunConfig::resolve("train", &a)?),
        Command::Eval(a) => cmd_eval(
            &RunConfig::resolve("eval", &a.common)?,
            &a.checkpoint,
            a.split,
        ),
        Command::Compare(a) => cmd_compare(&RunConfig::resolve("compare", &a)?),
        Command::Gradcheck(a) => cmd_gradcheck(
            &RunConfig::resolve("gradcheck", &a.common)?,
            a.perturb_gradient,
        ),
    }
}

fn progress(member: Member, m: &EpochMetrics) {
    eprintln!(
        "{:<17} epoch {:>3}  train loss {:.4} acc {:.4} fp {:>4}  val loss {:.4} acc {:.4} fp {:>3}",
        member.display_name(),
        m.epoch,
        m.train_loss,
        m.train_acc,
        m.train_fp,
        m.val_loss,
        m.val_acc,
        m.val_fp
    );
}

fn create_out(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    Corpus::load(&cfg.corpus, cfg.input_len).with_context(|| {
        format!(
            "loading corpus {} at T = {}",
            cfg.corpus.display(),
            cfg.input_len
        )
    })
}

fn cmd_generate(cfg: &RunConfig) -> Result<bool> {
    create_out(cfg)?;
    let report = synthgen::generate_corpus(&cfg.out, cfg.seed, &cfg.synth_config())
        .with_context(|| format!("generating corpus in {}", cfg.out.display()))?;
    cfg.write_echo(&cfg.out)?;
    println!(
        "wrote {} samples ({} sentences, {} questions) to {}",
        report.samples,
        report.sentence_samples,
        report.question_samples,
        cfg.out.display()
    );
    println!(
        "nearest-centroid validation accuracy {:.3}, corpus sha256 {}",
        report.separability.centroid_validation_accuracy, report.corpus_sha256
    );
    Ok(true)
}

fn cmd_train(cfg: &RunConfig) -> Result<bool> {
    let train = cfg.train_config();
    train.validate()?;
    let corpus = load_corpus(cfg)?;
    create_out(cfg)?;
    let members: &[Member] = match train.arch {
        Arch::Array => &[Member::Sentences, Member::Questions],
        Arch::Conventional => &[Member::Conventional],
    };
    let mut logs = Vec::new();
    for &member in members {
        let run = arraytrain::train_member(&corpus, member, &train, &mut progress)?;
        run.save(&cfg.out)?;
        println!(
            "{}: best epoch {} val acc {:.4}, final val acc {:.4}",
            member.display_name(),
            run.log.best_epoch,
            run.log.best().val_acc,
            run.log.epochs.last().expect("epochs >= 1").val_acc
        );
        logs.push(run.log);
    }
    cfg.write_echo(&cfg.out)?;
    let audit = arraytrain::audit_identity(&logs.iter().collect::<Vec<_>>());
    if !audit.passed {
        eprintln!(
            "identity audit failed:\n  {}",
            audit.violations.join("\n  ")
        );
    }
    Ok(audit.passed)
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &std::path::Path, split: SplitArg) -> Result<bool> {
    if !checkpoint.is_file() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Validation => Split::Validation,
    };
    let result = arraytrain::evaluate_checkpoint(checkpoint, &cfg.corpus, split, cfg.seed)
        .with_context(|| format!("evaluating {}", checkpoint.display()))?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(true)
}

fn cmd_compare(cfg: &RunConfig) -> Result<bool> {
    let train = cfg.train_config();
    train.validate()?;
    let corpus = load_corpus(cfg)?;
    create_out(cfg)?;
    let outcome = arraytrain::compare_report(&corpus, &train, &mut progress)?;
    for run in &outcome.runs {
        run.save(&cfg.out)?;
    }
    outcome.report.save(&cfg.out)?;
    cfg.write_echo(&cfg.out)?;
    print!("{}", outcome.report.render_table());
    let audit = &outcome.report.identity_audit;
    if !audit.passed {
        eprintln!(
            "identity audit failed:\n  {}",
            audit.violations.join("\n  ")
        );
    }
    Ok(audit.passed)
}

fn cmd_gradcheck(cfg: &RunConfig, perturb: f64) -> Result<bool> {
    let options = GradcheckOptions {
        perturb,
        loss_mode: cfg.train_config().loss_mode,
    };
    let report = gradcheck::run(cfg.seed, options)?;
    println!(
        "{:<14} {:>9} {:>14}  result",
        "component", "compared", "max rel err"
    );
    for c in &report.checks {
        println!(
            "{:<14} {:>9} {:>14.3e}  {}",
            c.component,
            c.compared,
            c.max_rel_error,
            if c.passed { "ok" } else { "FAIL" }
        );
    }
    if !report.passed() {
        let names: Vec<&str> = report.failures().map(|c| c.component.as_str()).collect();
        eprintln!(
            "gradient check failed (tolerance {:e}): {}",
            gradcheck::REL_TOLERANCE,
            names.join(", ")
        );
    }
    Ok(report.passed())
}
