use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

const T: &str = "40";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cnn-array"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn cnn-array")
}

fn path_arg(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

fn shared_corpus() -> &'static PathBuf {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let corpus = dir.path().join("corpus");
        let out = run(&["generate", "--out", path_arg(&corpus), "--seed", "7"]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        (dir, corpus)
    })
    .1
}

fn csv_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn generate_writes_2000_recordings_deterministically() {
    let corpus = shared_corpus();
    let n = fs::read_dir(corpus.join("samples")).unwrap().count();
    assert_eq!(n, 2000);
    for f in ["manifest.json", "generation_report.json", "run_config.json"] {
        assert!(corpus.join(f).is_file(), "{f} missing");
    }

    let again = tempfile::tempdir().unwrap();
    let out = run(&["generate", "--out", path_arg(again.path()), "--seed", "7"]);
    assert!(out.status.success());
    for f in [
        "manifest.json",
        "generation_report.json",
        "samples/subject03_question05_rep09.csv",
    ] {
        assert_eq!(
            fs::read(corpus.join(f)).unwrap(),
            fs::read(again.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn generate_into_unwritable_location_fails() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&["generate", "--out", path_arg(&blocker.join("corpus"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn train_array_and_conventional_for_one_epoch() {
    let corpus = shared_corpus();
    let dir = tempfile::tempdir().unwrap();
    let array = dir.path().join("array");
    let out = run(&[
        "train",
        "--corpus",
        path_arg(corpus),
        "--out",
        path_arg(&array),
        "--epochs",
        "1",
        "--input-len",
        T,
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(csv_rows(&array.join("sentences_metrics.csv")), 1);
    assert_eq!(csv_rows(&array.join("questions_metrics.csv")), 1);
    assert!(array.join("sentences.ckpt").is_file() && array.join("questions.norm.json").is_file());
    assert!(!array.join("conventional_metrics.csv").exists());

    let conv = dir.path().join("conv");
    let out = run(&[
        "train",
        "--corpus",
        path_arg(corpus),
        "--out",
        path_arg(&conv),
        "--epochs",
        "1",
        "--input-len",
        T,
        "--arch",
        "conventional",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(csv_rows(&conv.join("conventional_metrics.csv")), 1);
    assert!(!conv.join("sentences_metrics.csv").exists());

    let eval = |split: &str| {
        let out = run(&[
            "eval",
            "--corpus",
            path_arg(corpus),
            "--input-len",
            T,
            "--checkpoint",
            path_arg(&conv.join("conventional.ckpt")),
            "--split",
            split,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let v = eval("train");
    assert_eq!(v["split"], "train");
    assert_eq!(v["samples"], 1800);
    let v = eval("validation");
    assert_eq!(v["samples"], 200);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let corpus = shared_corpus();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("epochs = 1\ninput_len = {T}\narch = \"conventional\"\nseed = 11\n"),
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(&[
        "train",
        "--config",
        path_arg(&cfg),
        "--corpus",
        path_arg(corpus),
        "--out",
        path_arg(&out_dir),
        "--seed",
        "12",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let echo: serde_json::Value =
        serde_json::from_slice(&fs::read(out_dir.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 12);
    assert_eq!(echo["epochs"], 1);
    assert_eq!(echo["arch"], "conventional");

    fs::write(&cfg, "epochs = 1\nbogus = 3\n").unwrap();
    let out = run(&[
        "train",
        "--config",
        path_arg(&cfg),
        "--corpus",
        path_arg(corpus),
    ]);
    assert!(!out.status.success());
}

#[test]
fn eval_of_missing_checkpoint_fails() {
    let corpus = shared_corpus();
    let out = run(&[
        "eval",
        "--corpus",
        path_arg(corpus),
        "--checkpoint",
        "/nonexistent/model.ckpt",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
}

#[test]
fn train_on_missing_corpus_fails() {
    let out = run(&["train", "--corpus", "/nonexistent/corpus", "--epochs", "1"]);
    assert!(!out.status.success());
}

#[test]
fn compare_prints_three_rows_and_is_deterministic() {
    let corpus = shared_corpus();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out_dir = dir.path().join(name);
        let out = run(&[
            "compare",
            "--corpus",
            path_arg(corpus),
            "--out",
            path_arg(&out_dir),
            "--epochs",
            "1",
            "--input-len",
            T,
            "--batch",
            "64",
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let table = String::from_utf8(out.stdout).unwrap();
        for model in ["CNN-sentences", "CNN-questions", "CNN-conventional"] {
            assert!(table.contains(model), "{table}");
        }
        assert!(table.contains("passed"));
        outputs.push(out_dir);
    }
    for f in [
        "peak_report.json",
        "sentences_metrics.csv",
        "questions_metrics.csv",
        "conventional_metrics.csv",
    ] {
        assert_eq!(
            fs::read(outputs[0].join(f)).unwrap(),
            fs::read(outputs[1].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn gradcheck_passes_and_detects_a_perturbed_gradient() {
    let out = run(&["gradcheck"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    for component in [
        "conv1d",
        "relu",
        "maxpool1d",
        "flatten",
        "dense",
        "sigmoid",
        "cross_entropy",
        "full_model",
    ] {
        assert!(table.contains(component), "{table}");
    }
    assert!(!table.contains("FAIL"));

    let out = run(&["gradcheck", "--perturb-gradient", "0.01"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn unknown_subcommand_and_bad_values_are_usage_errors() {
    assert!(!run(&["frobnicate"]).status.success());
    assert!(!run(&["train", "--arch", "pyramid"]).status.success());
    assert!(
        !run(&["train", "--epochs", "0", "--corpus", "/nonexistent"])
            .status
            .success()
    );
}
