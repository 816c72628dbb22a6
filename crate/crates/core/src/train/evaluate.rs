//! Scoring a model on labeled records, with a per-record probability dump.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{argmax, auprc, auroc, confusion_metrics};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, Mode, Task};
use crate::cohort::EncounterRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub record_id: String,
    pub label: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub mode: Mode,
    pub n: usize,
    pub class_counts: Vec<usize>,
    /// `positive_class` for binary tasks, `macro` for multiclass.
    pub averaging: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Binary: positive-class AUROC. Multiclass: macro one-vs-rest over
    /// classes present with both outcomes. `None` when undefined.
    pub auroc: Option<f64>,
    pub auprc: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Report computed from stored probabilities.
pub fn report_from_predictions(rows: &[PredictionRow], task: Task, mode: Mode) -> Result<MetricsReport> {
    let c = task.n_classes();
    if rows.is_empty() {
        return Err(Error::Data("no labeled records to evaluate".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.probs.len() != c || r.label >= c) {
        return Err(Error::Data(format!("prediction row {} does not fit {c} classes", r.record_id)));
    }
    let labels: Vec<usize> = rows.iter().map(|r| r.label).collect();
    let preds: Vec<usize> = rows.iter().map(|r| argmax(&r.probs)).collect();
    let cm = confusion_metrics(&preds, &labels, c)?;
    let mut class_counts = vec![0; c];
    for &l in &labels {
        class_counts[l] += 1;
    }
    let one_vs_rest = |k: usize| -> (Option<f64>, Option<f64>) {
        let scores: Vec<f64> = rows.iter().map(|r| r.probs[k]).collect();
        let is_k: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        (auroc(&scores, &is_k).ok(), auprc(&scores, &is_k).ok())
    };
    let (auroc_v, auprc_v) = if c == 2 {
        one_vs_rest(1)
    } else {
        let pairs: Vec<(f64, f64)> = (0..c)
            .filter_map(|k| match one_vs_rest(k) {
                (Some(a), Some(p)) => Some((a, p)),
                _ => None,
            })
            .collect();
        if pairs.is_empty() {
            (None, None)
        } else {
            let k = pairs.len() as f64;
            (
                Some(pairs.iter().map(|p| p.0).sum::<f64>() / k),
                Some(pairs.iter().map(|p| p.1).sum::<f64>() / k),
            )
        }
    };
    Ok(MetricsReport {
        task,
        mode,
        n: rows.len(),
        class_counts,
        averaging: if c == 2 { "positive_class" } else { "macro" }.into(),
        accuracy: cm.accuracy,
        precision: cm.precision,
        recall: cm.recall,
        f1: cm.f1,
        auroc: auroc_v,
        auprc: auprc_v,
        confusion: cm.confusion,
    })
}

/// Predicts every labeled record (in input order) and scores the results.
pub fn evaluate(model: &FusionModel, records: &[EncounterRecord]) -> Result<(MetricsReport, Vec<PredictionRow>)> {
    let task = model.config.task;
    let rows: Vec<PredictionRow> = records
        .par_iter()
        .filter_map(|r| task.target(r).map(|t| (r, t)))
        .map(|(r, label)| {
            Ok(PredictionRow {
                record_id: r.record_id(),
                label,
                probs: model.forward(r)?,
            })
        })
        .collect::<Result<_>>()?;
    let report = report_from_predictions(&rows, task, model.config.mode)?;
    Ok((report, rows))
}

pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let f = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}
