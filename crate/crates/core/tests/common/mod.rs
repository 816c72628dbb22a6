//! Reference implementations and fixtures shared by the integration tests.
//! The oracles here are written from the metric and rule definitions and do
//! not call into the library code they check.
#![allow(dead_code)]

use clinfusion::cohort::{generate_cohort, split_cohort, EncounterRecord, LabPanel, SynthConfig, CATALOG_ITEMS};
use clinfusion::fusion::{Mode, ModelConfig};
use clinfusion::lab_encoder::LabEncoderConfig;
use clinfusion::text::EncoderConfig;
use clinfusion::train::TrainConfig;
use rand::seq::SliceRandom;
use rand::Rng;

/// Mann-Whitney statistic by counting every positive/negative pair.
pub fn auroc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Average precision from every distinct threshold, each applied as
/// `score >= t`, summing precision times the recall gained.
pub fn auprc_thresholds(scores: &[f64], labels: &[bool]) -> f64 {
    let total_pos = labels.iter().filter(|&&l| l).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for t in thresholds {
        let mut tp = 0.0;
        let mut fp = 0.0;
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / total_pos;
        let precision = tp / (tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    ap
}

/// Random scored set with both classes. In tie-heavy sets scores are drawn
/// from a handful of levels.
pub fn random_scored_set<R: Rng>(rng: &mut R, heavy_ties: bool) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=200);
    let levels = rng.random_range(1..=4);
    let prevalence: f64 = rng.random_range(0.05..0.95);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(prevalence)).collect();
    labels[0] = true;
    labels[1] = false;
    labels.shuffle(rng);
    let scores = (0..n)
        .map(|_| {
            if heavy_ties {
                rng.random_range(0..levels) as f64 / 4.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (scores, labels)
}

/// Diabetes rule written out directly: fasting glucose (either fasting
/// item) at or above 126 mg/dL, or HbA1c at or above 6.5 %. `None` when
/// no rule item was measured.
pub fn diabetes_rule_oracle(glucose_ac: Option<f64>, glucose_ac_poct: Option<f64>, hba1c: Option<f64>) -> Option<bool> {
    if glucose_ac.is_none() && glucose_ac_poct.is_none() && hba1c.is_none() {
        return None;
    }
    let over = |v: Option<f64>, t: f64| v.is_some_and(|x| x >= t);
    Some(over(glucose_ac, 126.0) || over(glucose_ac_poct, 126.0) || over(hba1c, 6.5))
}

/// Decimal string with 0 to 3 fractional digits, trailing zeros kept.
pub fn random_raw<R: Rng>(rng: &mut R) -> String {
    let decimals = rng.random_range(0..=3usize);
    let int = rng.random_range(0..2000u32);
    if decimals == 0 {
        int.to_string()
    } else {
        let frac = rng.random_range(0..10u32.pow(decimals as u32));
        format!("{int}.{frac:0width$}", width = decimals)
    }
}

/// Random subset of catalog items in random order with random raw values.
pub fn random_panel<R: Rng>(rng: &mut R) -> LabPanel {
    let k = rng.random_range(0..=CATALOG_ITEMS.len());
    let mut names: Vec<&str> = CATALOG_ITEMS.to_vec();
    names.shuffle(rng);
    let mut p = LabPanel::new();
    for name in &names[..k] {
        p.insert(*name, random_raw(rng)).unwrap();
    }
    p
}

/// Learnability cohort at full size, split 80/20 by patient, with 10% of
/// training patients held out for validation.
pub struct Splits {
    pub fit: Vec<EncounterRecord>,
    pub val: Vec<EncounterRecord>,
    pub test: Vec<EncounterRecord>,
}

pub fn learnability_splits(seed: u64) -> Splits {
    let cfg = SynthConfig {
        seed,
        ..SynthConfig::learnability()
    };
    let records = generate_cohort(&cfg).unwrap();
    let (train, test) = split_cohort(&records, 0.8, seed).unwrap();
    let (fit, val) = split_cohort(&train, 0.9, seed + 1).unwrap();
    Splits { fit, val, test }
}

/// Desk-sized model used by the acceptance runs.
pub fn small_model(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        encoder: EncoderConfig {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            ffn_mult: 2,
            max_len: 64,
            ..EncoderConfig::default()
        },
        lab_encoder: LabEncoderConfig { hidden: vec![64, 32] },
        ..ModelConfig::default()
    }
}

pub fn train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 32,
        lr: 2e-3,
        seed,
        ..TrainConfig::default()
    }
}

/// Tiny model for gradient and plumbing tests.
pub fn tiny_model(mode: Mode) -> ModelConfig {
    ModelConfig {
        mode,
        encoder: EncoderConfig {
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            ffn_mult: 2,
            max_len: 48,
            ..EncoderConfig::default()
        },
        lab_encoder: LabEncoderConfig { hidden: vec![6] },
        fusion_heads: 2,
        ..ModelConfig::default()
    }
}

/// Small generated cohort for plumbing tests.
pub fn small_cohort(n_patients: usize, seed: u64) -> Vec<EncounterRecord> {
    generate_cohort(&SynthConfig {
        n_patients,
        seed,
        ..SynthConfig::learnability()
    })
    .unwrap()
}
