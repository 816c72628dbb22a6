mod common;

use clinfusion::cohort::{split_cohort, LabCatalog};
use clinfusion::fusion::Mode;
use clinfusion::numeric::{Tape, Tensor};
use clinfusion::train::{
    auprc, auroc, evaluate, inverse_frequency_weights, read_predictions, train, write_predictions, TrainConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn auprc_of_uninformative_scores_is_prevalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 20_000;
    let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let prevalence = labels.iter().filter(|&&l| l).count() as f64 / n as f64;
    let ap = auprc(&scores, &labels).unwrap();
    assert!((ap - prevalence).abs() < 0.02, "auprc {ap} vs prevalence {prevalence}");
}

#[test]
fn balanced_classes_get_equal_weights_and_an_unchanged_loss() {
    let targets = [0, 1, 1, 0, 1, 0];
    let w = inverse_frequency_weights(&targets, 2).unwrap();
    assert_eq!(w, vec![1.0, 1.0]);
    let logits = Tensor::matrix(&[&[0.2, -1.0], &[1.5, 0.3], &[0.0, 0.0], &[-2.0, 1.0], &[0.4, 0.9], &[3.0, -3.0]]).unwrap();
    let tape = Tape::new();
    let x = tape.constant(logits);
    let plain = tape.cross_entropy(x, &targets, None).unwrap();
    let weighted = tape.cross_entropy(x, &targets, Some(&w)).unwrap();
    assert_eq!(tape.value(plain).data(), tape.value(weighted).data());
}

#[test]
fn report_replays_from_the_probability_dump() {
    let cohort = small_cohort(120, 3);
    let (train_set, test) = split_cohort(&cohort, 0.8, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        ..train_config(3)
    };
    let (model, _) = train(tiny_model(Mode::Fusion), &train_set, &[], &LabCatalog::default(), &cfg).unwrap();
    let (report, rows) = evaluate(&model, &test).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pred.jsonl");
    write_predictions(&path, &rows).unwrap();
    let replay = read_predictions(&path).unwrap();
    assert_eq!(replay, rows);

    let labels: Vec<bool> = replay.iter().map(|r| r.label == 1).collect();
    let scores: Vec<f64> = replay.iter().map(|r| r.probs[1]).collect();
    let preds: Vec<bool> = replay.iter().map(|r| r.probs[1] > r.probs[0]).collect();
    let tp = preds.iter().zip(&labels).filter(|(p, l)| **p && **l).count() as f64;
    let fp = preds.iter().zip(&labels).filter(|(p, l)| **p && !**l).count() as f64;
    let fn_ = preds.iter().zip(&labels).filter(|(p, l)| !**p && **l).count() as f64;
    let correct = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64;
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    assert_eq!(report.n, replay.len());
    assert!((report.accuracy - correct / replay.len() as f64).abs() < 1e-12);
    assert!((report.precision - precision).abs() < 1e-12);
    assert!((report.recall - recall).abs() < 1e-12);
    assert!((report.auroc.unwrap() - auroc_pairs(&scores, &labels)).abs() < 1e-12);
    assert!((report.auprc.unwrap() - auprc_thresholds(&scores, &labels)).abs() < 1e-12);

    let (again, rows_again) = evaluate(&model, &test).unwrap();
    assert_eq!(again, report);
    assert_eq!(rows_again, rows);
}

proptest! {
    #[test]
    fn auroc_ignores_strictly_monotone_transforms(
        raw in prop::collection::vec((0u32..40, any::<bool>()), 2..80),
    ) {
        let mut labels: Vec<bool> = raw.iter().map(|r| r.1).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = raw.iter().map(|r| r.0 as f64 / 8.0).collect();
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&warped, &labels).unwrap());
        prop_assert!((auroc(&scores, &labels).unwrap() - auroc_pairs(&scores, &labels)).abs() <= 1e-12);
        prop_assert!((auprc(&scores, &labels).unwrap() - auprc_thresholds(&scores, &labels)).abs() <= 1e-12);
    }
}
