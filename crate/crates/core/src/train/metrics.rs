//! Confusion-matrix metrics, AUROC and AUPRC.
//!
//! Conventions: any 0/0 rate is 0; multiclass precision/recall/F1 are
//! macro averages; argmax ties resolve to the lowest class index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// With two classes, precision/recall/F1 refer to class 1; otherwise they
/// are macro averages over all `n_classes`.
pub fn confusion_metrics(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Data("no predictions to score".into()));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Index(format!("class index out of range for {n_classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class = |c: usize| {
        let tp = confusion[c][c];
        let predicted: usize = (0..n_classes).map(|t| confusion[t][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        (p, r, f1(p, r))
    };
    let (precision, recall, f) = if n_classes == 2 {
        per_class(1)
    } else {
        let k = n_classes as f64;
        let (mut sp, mut sr, mut sf) = (0.0, 0.0, 0.0);
        for c in 0..n_classes {
            let (p, r, f) = per_class(c);
            sp += p;
            sr += r;
            sf += f;
        }
        (sp / k, sr / k, sf / k)
    };
    Ok(ConfusionMetrics {
        accuracy: ratio(correct, labels.len()),
        precision,
        recall,
        f1: f,
        confusion,
    })
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    Ok((pos, labels.len() - pos))
}

/// Indices sorted by descending score, ties kept together.
fn descending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Mann–Whitney statistic `(wins + ties/2) / (P·N)` via midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, n) = check_inputs(scores, labels)?;
    if p == 0 || n == 0 {
        return Err(Error::MetricUndefined("AUROC needs both classes".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the midrank sum keeps everything in integers.
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank2_sum += mid2;
            }
        }
        i = j + 1;
    }
    let (p, n) = (p as u128, n as u128);
    // 2·U = 2·R − P(P+1)
    let u2 = rank2_sum - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}

/// Step-wise area under the precision–recall curve, sweeping tie groups
/// of descending scores: `Σ (R_k − R_{k−1}) · P_k`.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (p, _) = check_inputs(scores, labels)?;
    if p == 0 {
        return Err(Error::MetricUndefined("AUPRC needs at least one positive".into()));
    }
    let idx = descending(scores);
    let (mut tp, mut seen, mut area) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        let mut group_tp = 0;
        while j < idx.len() && scores[idx[j]] == scores[idx[i]] {
            if labels[idx[j]] {
                group_tp += 1;
            }
            j += 1;
        }
        tp += group_tp;
        seen += j - i;
        if group_tp > 0 {
            area += (group_tp as f64 / p as f64) * (tp as f64 / seen as f64);
        }
        i = j;
    }
    Ok(area)
}
