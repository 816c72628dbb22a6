//! Encounter records and the JSON-lines cohort file.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::lab::LabPanel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Positive,
    Negative,
    Unlabeled,
}

impl BinaryLabel {
    /// Class index (negative = 0, positive = 1), `None` when unlabeled.
    pub fn class_index(self) -> Option<usize> {
        match self {
            BinaryLabel::Negative => Some(0),
            BinaryLabel::Positive => Some(1),
            BinaryLabel::Unlabeled => None,
        }
    }
}

/// The five chronic-disease categories, in class-index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChronicClass {
    DiabetesOnly,
    DiabetesHypertension,
    DiabetesHyperlipidemia,
    HypertensionOnly,
    Other,
}

impl ChronicClass {
    pub const ALL: [ChronicClass; 5] = [
        ChronicClass::DiabetesOnly,
        ChronicClass::DiabetesHypertension,
        ChronicClass::DiabetesHyperlipidemia,
        ChronicClass::HypertensionOnly,
        ChronicClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ChronicClass::DiabetesOnly => "diabetes_only",
            ChronicClass::DiabetesHypertension => "diabetes_hypertension",
            ChronicClass::DiabetesHyperlipidemia => "diabetes_hyperlipidemia",
            ChronicClass::HypertensionOnly => "hypertension_only",
            ChronicClass::Other => "other",
        }
    }
}

/// One patient encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub patient_id: String,
    pub date: NaiveDate,
    pub note_text: String,
    #[serde(rename = "labs")]
    pub panel: LabPanel,
    pub label_binary: BinaryLabel,
    /// `null` in the file when unlabeled.
    pub label_multiclass: Option<ChronicClass>,
    /// First rule-positive encounter within 180 days of disease onset.
    #[serde(default)]
    pub onset_flag: bool,
}

impl EncounterRecord {
    /// Stable identifier, `patient_id@date`.
    pub fn record_id(&self) -> String {
        format!("{}@{}", self.patient_id, self.date)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patient_id.is_empty() {
            return Err(Error::Data("record has an empty patient_id".into()));
        }
        if self.note_text.trim().is_empty() && self.panel.is_empty() {
            return Err(Error::Data(format!(
                "record {} has neither note text nor labs",
                self.record_id()
            )));
        }
        Ok(())
    }
}

/// Serializes one record as a single JSON line (no trailing newline).
pub fn to_json_line(record: &EncounterRecord) -> Result<String> {
    Ok(serde_json::to_string(record)?)
}

pub fn write_cohort(path: &Path, records: &[EncounterRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        w.write_all(to_json_line(r)?.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cohort(path: &Path) -> Result<Vec<EncounterRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EncounterRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EncounterRecord {
        EncounterRecord {
            patient_id: "P000001".into(),
            date: NaiveDate::from_ymd_opt(2020, 12, 24).unwrap(),
            note_text: "This is a 56-year-old male patient.".into(),
            panel: LabPanel::from_pairs([("TSH", "1.450"), ("Glucose AC", "148")]).unwrap(),
            label_binary: BinaryLabel::Positive,
            label_multiclass: Some(ChronicClass::DiabetesHypertension),
            onset_flag: true,
        }
    }

    #[test]
    fn json_line_field_names() {
        let line = to_json_line(&sample()).unwrap();
        assert_eq!(
            line,
            r#"{"patient_id":"P000001","date":"2020-12-24","note_text":"This is a 56-year-old male patient.","labs":{"TSH":"1.450","Glucose AC":"148"},"label_binary":"positive","label_multiclass":"diabetes_hypertension","onset_flag":true}"#
        );
        let back: EncounterRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, sample());
    }

    #[test]
    fn record_needs_some_content() {
        let mut r = sample();
        r.note_text.clear();
        assert!(r.validate().is_ok());
        r.panel = LabPanel::new();
        assert!(r.validate().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut b = sample();
        b.label_multiclass = None;
        b.label_binary = BinaryLabel::Unlabeled;
        write_cohort(&path, &[sample(), b.clone()]).unwrap();
        assert_eq!(read_cohort(&path).unwrap(), vec![sample(), b]);
    }

    #[test]
    fn class_indices() {
        for (i, c) in ChronicClass::ALL.iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(ChronicClass::from_index(i), Some(*c));
        }
        assert_eq!(BinaryLabel::Positive.class_index(), Some(1));
        assert_eq!(BinaryLabel::Unlabeled.class_index(), None);
    }
}
