//! Patient-level train/test split.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::record::EncounterRecord;
use crate::error::{Error, Result};

/// Splits records so each patient lands entirely on one side.
///
/// Patients are shuffled with `seed` and the first `round(ratio · n)` go to
/// the training side; record order within each side is preserved.
pub fn split_cohort(
    records: &[EncounterRecord],
    ratio: f64,
    seed: u64,
) -> Result<(Vec<EncounterRecord>, Vec<EncounterRecord>)> {
    if records.is_empty() {
        return Err(Error::Data("cannot split an empty cohort".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must be in (0,1), got {ratio}")));
    }
    let mut patients: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for r in records {
        if seen.insert(r.patient_id.as_str()) {
            patients.push(&r.patient_id);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    patients.shuffle(&mut rng);
    let n_train = (ratio * patients.len() as f64).round() as usize;
    let train_ids: std::collections::HashSet<&str> = patients[..n_train].iter().copied().collect();
    let (train, test) = records
        .iter()
        .cloned()
        .partition(|r| train_ids.contains(r.patient_id.as_str()));
    Ok((train, test))
}

/// Records usable for the initial-onset task: every encounter of a patient
/// up to and including the one carrying the onset flag (all encounters for
/// patients without one).
pub fn onset_task_records(records: &[EncounterRecord]) -> Vec<EncounterRecord> {
    let mut cutoff = std::collections::HashMap::new();
    for r in records.iter().filter(|r| r.onset_flag) {
        cutoff.entry(r.patient_id.as_str()).or_insert(r.date);
    }
    records
        .iter()
        .filter(|r| cutoff.get(r.patient_id.as_str()).is_none_or(|&d| r.date <= d))
        .cloned()
        .collect()
}
