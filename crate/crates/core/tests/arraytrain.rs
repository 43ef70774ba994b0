use std::sync::OnceLock;

use imu_cnn_array::arraytrain::{
    self, accuracy, audit_identity, classify_array, evaluate, false_predictions, EpochMetrics,
    Member, PeakRow, TrainConfig, TrainingLog, INCONSISTENT_REFERENCE_ROW, REFERENCE_TRAINING_ROWS,
};
use imu_cnn_array::dataset::{Context, Corpus, Split};
use imu_cnn_array::synthgen::{generate_corpus, SynthConfig};
use imu_cnn_array::{Error, Model, Tensor};
use proptest::prelude::*;

const T: usize = 40;

struct Fixture {
    _dir: tempfile::TempDir,
    corpus: Corpus,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        generate_corpus(dir.path(), 31, &SynthConfig::default()).unwrap();
        let corpus = Corpus::load(dir.path(), T).unwrap();
        Fixture { _dir: dir, corpus }
    })
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 64,
        learning_rate: 1e-3,
        seed: 5,
        input_length: T,
        ..TrainConfig::default()
    }
}

fn quiet(_: Member, _: &EpochMetrics) {}

#[test]
fn false_prediction_counts() {
    let targets = Tensor::from_vec(
        &[5, 3],
        vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 1., 0., 0., 0., 1., 0.],
    )
    .unwrap();
    assert_eq!(false_predictions(&targets, &targets).unwrap(), 0);
    let preds = Tensor::from_vec(
        &[5, 3],
        vec![
            0.9, 0.1, 0.0, 0.2, 0.7, 0.1, 0.6, 0.3, 0.1, 0.5, 0.5, 0.0, 0.3, 0.3, 0.4,
        ],
    )
    .unwrap();
    // row 3 ties between classes 0 and 1 and resolves to 0 (correct)
    let fp = false_predictions(&preds, &targets).unwrap();
    assert_eq!(fp, 2);
    assert_eq!(accuracy(fp, 5), 0.6);
    let wrong = Tensor::zeros(&[5, 4]).unwrap();
    assert!(matches!(
        false_predictions(&wrong, &targets),
        Err(Error::Shape(_))
    ));
}

#[test]
fn reference_rows_satisfy_identity_within_rounding() {
    for row in REFERENCE_TRAINING_ROWS {
        assert!(row.consistent(), "{row:?} -> {}", row.computed_percent());
    }
    assert!((REFERENCE_TRAINING_ROWS[0].computed_percent() - 98.4259).abs() < 1e-4);
    assert!(!INCONSISTENT_REFERENCE_ROW.consistent());
    assert_eq!(INCONSISTENT_REFERENCE_ROW.computed_percent(), 94.0);
}

#[test]
fn prepared_split_sizes() {
    let c = &fixture().corpus;
    let sizes = |m| {
        let d = arraytrain::prepare(c, m, 9).unwrap();
        (d.train.len(), d.validation.len())
    };
    assert_eq!(sizes(Member::Sentences), (1080, 120));
    assert_eq!(sizes(Member::Questions), (720, 80));
    assert_eq!(sizes(Member::Conventional), (1800, 200));
}

#[test]
fn untrained_accuracy_is_near_chance_and_evaluation_is_pure() {
    let c = &fixture().corpus;
    let data = arraytrain::prepare(c, Member::Conventional, 3).unwrap();
    for seed in 0..3 {
        let model = Model::build(20, T, seed).unwrap();
        let a = evaluate(&model, &data.validation).unwrap();
        let b = evaluate(&model, &data.validation).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.accuracy,
            1.0 - a.false_predictions as f64 / a.samples as f64
        );
        // binomial 99.9% band around 1/20 on 200 samples: at most 20 correct
        let correct = a.samples - a.false_predictions;
        assert!(correct <= 20, "{correct} correct before training");
        assert!((0.005..=0.25).contains(&a.accuracy), "{}", a.accuracy);
    }
}

#[test]
fn evaluate_rejects_empty_and_mismatched() {
    let c = &fixture().corpus;
    let data = arraytrain::prepare(c, Member::Questions, 3).unwrap();
    let model = Model::build(12, T, 0).unwrap();
    assert!(matches!(
        evaluate(&model, &data.validation),
        Err(Error::Contract(_))
    ));
    let empty = arraytrain::LabeledSet::new(&[], vec![], 8).unwrap();
    let model = Model::build(8, T, 0).unwrap();
    assert!(matches!(evaluate(&model, &empty), Err(Error::Contract(_))));
}

#[test]
fn training_is_deterministic_and_members_are_isolated() {
    let c = &fixture().corpus;
    let cfg = small_config(2);
    let s1 = arraytrain::train_member(c, Member::Sentences, &cfg, &mut quiet).unwrap();
    assert_eq!(s1.log.epochs.len(), 2);
    assert_eq!((s1.log.n_train, s1.log.n_val), (1080, 120));

    // training the other member first does not change this one
    arraytrain::train_member(c, Member::Questions, &cfg, &mut quiet).unwrap();
    let s2 = arraytrain::train_member(c, Member::Sentences, &cfg, &mut quiet).unwrap();
    assert_eq!(s1.log.to_csv(), s2.log.to_csv());

    // question data does not reach the sentence network
    let mut mutated = c.clone();
    for w in mutated
        .windows
        .iter_mut()
        .filter(|w| w.context == Context::Question)
    {
        w.signal.data_mut().iter_mut().for_each(|v| *v = -*v + 3.0);
    }
    let s3 = arraytrain::train_member(&mutated, Member::Sentences, &cfg, &mut quiet).unwrap();
    assert_eq!(s1.log.to_csv(), s3.log.to_csv());

    let audit = audit_identity(&[&s1.log]);
    assert!(audit.passed && audit.checked_epochs == 2);
    assert!(s1
        .log
        .to_csv()
        .starts_with("epoch,train_loss,train_acc,train_fp,val_loss,val_acc,val_fp\n1,"));
}

#[test]
fn train_rejects_class_mismatch() {
    let c = &fixture().corpus;
    let data = arraytrain::prepare(c, Member::Questions, 1).unwrap();
    let mut model = Model::build(12, T, 0).unwrap();
    let err = arraytrain::train(
        &mut model,
        &data.train,
        &data.validation,
        &small_config(1),
        Member::Questions,
        &mut quiet,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn array_routes_by_context_and_matches_member_metrics() {
    let c = &fixture().corpus;
    let cfg = small_config(3);
    let (array, logs) = arraytrain::train_array(c, &cfg, &mut quiet).unwrap();
    let q = c
        .windows
        .iter()
        .find(|w| w.context == Context::Question)
        .unwrap();
    let s = c
        .windows
        .iter()
        .find(|w| w.context == Context::Sentence)
        .unwrap();
    assert_eq!(classify_array(&array, q).unwrap().1.shape(), &[8]);
    assert_eq!(classify_array(&array, s).unwrap().1.shape(), &[12]);

    // array false predictions on the mixed validation set = sum over members
    let tags = imu_cnn_array::dataset::stratified_split(&c.windows, 0.9, cfg.seed).unwrap();
    let mut wrong = 0;
    let mut n = 0;
    for (w, t) in c.windows.iter().zip(&tags) {
        if *t == Split::Validation {
            n += 1;
            wrong += usize::from(classify_array(&array, w).unwrap().0 != w.class_id);
        }
    }
    let member_eval = |net: &arraytrain::TrainedNet, m: Member| {
        let data = arraytrain::prepare(c, m, cfg.seed).unwrap();
        evaluate(&net.model, &data.validation).unwrap()
    };
    let es = member_eval(&array.sentences, Member::Sentences);
    let eq = member_eval(&array.questions, Member::Questions);
    assert_eq!(n, es.samples + eq.samples);
    assert_eq!(wrong, es.false_predictions + eq.false_predictions);
    let weighted = (es.accuracy * es.samples as f64 + eq.accuracy * eq.samples as f64) / n as f64;
    assert!((accuracy(wrong, n) - weighted).abs() < 1e-12);
    // returned networks are the best-validation-loss epochs
    assert_eq!(eq.loss, logs[1].best().val_loss);
}

#[test]
fn checkpoint_eval_reproduces_best_epoch() {
    let f = fixture();
    let cfg = small_config(3);
    let run = arraytrain::train_member(&f.corpus, Member::Questions, &cfg, &mut quiet).unwrap();
    let out = tempfile::tempdir().unwrap();
    run.save(out.path()).unwrap();
    let ckpt = out.path().join("questions.ckpt");
    let eval = arraytrain::evaluate_checkpoint(&ckpt, &f.corpus.root, Split::Validation, cfg.seed)
        .unwrap();
    let best = run.log.best();
    assert!((eval.metrics.loss - best.val_loss).abs() <= 1e-5);
    assert_eq!(eval.metrics.false_predictions, best.val_fp);
    assert!((eval.metrics.accuracy - best.val_acc).abs() <= 1e-5);
    let on_train =
        arraytrain::evaluate_checkpoint(&ckpt, &f.corpus.root, Split::Train, cfg.seed).unwrap();
    assert_eq!(
        (on_train.split, on_train.metrics.samples),
        (Split::Train, 720)
    );
    assert!(arraytrain::evaluate_checkpoint(
        &out.path().join("nope.ckpt"),
        &f.corpus.root,
        Split::Train,
        1
    )
    .is_err());
}

fn log_from(rows: Vec<(f64, usize, f64, usize)>) -> TrainingLog {
    let (n_train, n_val) = (50, 10);
    let epochs: Vec<EpochMetrics> = rows
        .into_iter()
        .enumerate()
        .map(|(i, (tl, tf, vl, vf))| EpochMetrics {
            epoch: i + 1,
            train_loss: tl,
            train_acc: accuracy(tf, n_train),
            train_fp: tf,
            val_loss: vl,
            val_acc: accuracy(vf, n_val),
            val_fp: vf,
        })
        .collect();
    TrainingLog {
        model: "m".into(),
        n_train,
        n_val,
        epochs,
        best_epoch: 1,
    }
}

proptest! {
    #[test]
    fn peaks_are_extrema_of_the_series(
        rows in prop::collection::vec((0.0f64..5.0, 0usize..=50, 0.0f64..5.0, 0usize..=10), 1..40)
    ) {
        let log = log_from(rows);
        let p = PeakRow::from_log(&log).unwrap();
        let e = &log.epochs;
        prop_assert!(e.iter().all(|m| p.train_loss <= m.train_loss && p.val_loss <= m.val_loss));
        prop_assert!(e.iter().any(|m| m.train_loss == p.train_loss));
        prop_assert!(e.iter().any(|m| m.val_loss == p.val_loss));
        prop_assert_eq!(p.train_fp, e.iter().map(|m| m.train_fp).min().unwrap());
        prop_assert_eq!(p.val_fp, e.iter().map(|m| m.val_fp).min().unwrap());
        prop_assert_eq!(p.train_acc, accuracy(p.train_fp, 50));
        prop_assert_eq!(p.val_acc, accuracy(p.val_fp, 10));
        prop_assert_eq!(p.final_epoch, *e.last().unwrap());
        prop_assert!(audit_identity(&[&log]).passed);
    }
}

#[test]
fn identity_audit_flags_a_tampered_row() {
    let mut log = log_from(vec![(1.0, 5, 1.0, 2), (0.5, 3, 0.7, 1)]);
    log.epochs[1].val_acc = 0.95;
    let audit = audit_identity(&[&log]);
    assert!(!audit.passed);
    assert_eq!(audit.violations.len(), 1);
}
