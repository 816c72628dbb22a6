//! Rule-derived labels: the diabetes lab criteria and the five-way chronic class.

use serde::{Deserialize, Serialize};

use super::lab::LabPanel;
use super::record::{BinaryLabel, ChronicClass};
use crate::error::{Error, Result};

/// Diabetes is present when fasting glucose ≥ 126 mg/dL or HbA1c ≥ 6.5 %.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub fpg_threshold: f64,
    pub hba1c_threshold: f64,
    /// Catalog items that measure fasting plasma glucose.
    pub glucose_item_names: Vec<String>,
    pub hba1c_item_names: Vec<String>,
}

impl Default for LabelRule {
    fn default() -> Self {
        Self {
            fpg_threshold: 126.0,
            hba1c_threshold: 6.5,
            glucose_item_names: vec!["Glucose AC".into(), "Glucose AC (POCT)".into()],
            hba1c_item_names: vec!["HbA1c".into()],
        }
    }
}

impl LabelRule {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [("fpg_threshold", self.fpg_threshold), ("hba1c_threshold", self.hba1c_threshold)] {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// Threshold for a mapped item, `None` if the rule does not use it.
    pub fn threshold_for(&self, item: &str) -> Option<f64> {
        if self.glucose_item_names.iter().any(|n| n == item) {
            Some(self.fpg_threshold)
        } else if self.hba1c_item_names.iter().any(|n| n == item) {
            Some(self.hba1c_threshold)
        } else {
            None
        }
    }

    /// Mapped items in rule order: glucose items first, then HbA1c items.
    pub fn mapped_items(&self) -> impl Iterator<Item = &str> {
        self.glucose_item_names
            .iter()
            .chain(&self.hba1c_item_names)
            .map(String::as_str)
    }
}

/// Positive if any mapped item reaches its threshold, negative if mapped
/// items are present and all below, unlabeled if none is present.
pub fn assign_binary_label(panel: &LabPanel, rule: &LabelRule) -> Result<BinaryLabel> {
    let mut seen = false;
    let mut positive = false;
    for item in rule.mapped_items() {
        let Some(v) = panel.get(item) else { continue };
        let value = v
            .value()
            .ok_or_else(|| Error::Data(format!("non-numeric value {:?} for {item}", v.raw())))?;
        let threshold = rule.threshold_for(item).expect("mapped item");
        seen = true;
        if value >= threshold {
            positive = true;
        }
    }
    Ok(match (seen, positive) {
        (false, _) => BinaryLabel::Unlabeled,
        (true, true) => BinaryLabel::Positive,
        (true, false) => BinaryLabel::Negative,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub diabetes: bool,
    pub hypertension: bool,
    pub hyperlipidemia: bool,
}

/// Diabetes pairings outrank `hypertension_only`; with all three conditions
/// hypertension wins; hyperlipidemia alone falls into `other`.
pub fn assign_multiclass_label(flags: ConditionFlags) -> ChronicClass {
    match (flags.diabetes, flags.hypertension, flags.hyperlipidemia) {
        (true, true, _) => ChronicClass::DiabetesHypertension,
        (true, false, true) => ChronicClass::DiabetesHyperlipidemia,
        (true, false, false) => ChronicClass::DiabetesOnly,
        (false, true, _) => ChronicClass::HypertensionOnly,
        (false, false, _) => ChronicClass::Other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(pairs: &[(&str, &str)]) -> BinaryLabel {
        let panel = LabPanel::from_pairs(pairs.iter().copied()).unwrap();
        assign_binary_label(&panel, &LabelRule::default()).unwrap()
    }

    #[test]
    fn threshold_boundaries_are_inclusive() {
        assert_eq!(label(&[("Glucose AC", "126")]), BinaryLabel::Positive);
        assert_eq!(label(&[("Glucose AC", "100"), ("HbA1c", "6.5")]), BinaryLabel::Positive);
        assert_eq!(label(&[("Glucose AC", "125.9"), ("HbA1c", "6.49")]), BinaryLabel::Negative);
        assert_eq!(label(&[("Glucose AC (POCT)", "130")]), BinaryLabel::Positive);
    }

    #[test]
    fn unmapped_items_leave_record_unlabeled() {
        assert_eq!(label(&[("Glucose random", "300"), ("K", "4.5")]), BinaryLabel::Unlabeled);
        assert_eq!(label(&[]), BinaryLabel::Unlabeled);
    }

    #[test]
    fn non_numeric_mapped_value_names_item() {
        let panel = LabPanel::from_pairs([("HbA1c", ">14")]).unwrap();
        let err = assign_binary_label(&panel, &LabelRule::default()).unwrap_err();
        assert!(err.to_string().contains("HbA1c"));
        // Non-numeric unmapped items are irrelevant.
        let panel = LabPanel::from_pairs([("CRP", "<0.5"), ("Glucose AC", "90")]).unwrap();
        assert_eq!(assign_binary_label(&panel, &LabelRule::default()).unwrap(), BinaryLabel::Negative);
    }

    #[test]
    fn rule_validation() {
        let mut r = LabelRule::default();
        assert!(r.validate().is_ok());
        r.fpg_threshold = 0.0;
        assert!(r.validate().is_err());
    }

    #[test]
    fn multiclass_mapping_table() {
        let f = |d, h, l| {
            assign_multiclass_label(ConditionFlags {
                diabetes: d,
                hypertension: h,
                hyperlipidemia: l,
            })
        };
        assert_eq!(f(true, false, false), ChronicClass::DiabetesOnly);
        assert_eq!(f(false, true, false), ChronicClass::HypertensionOnly);
        assert_eq!(f(false, false, false), ChronicClass::Other);
        assert_eq!(f(true, true, false), ChronicClass::DiabetesHypertension);
        assert_eq!(f(true, false, true), ChronicClass::DiabetesHyperlipidemia);
        assert_eq!(f(true, true, true), ChronicClass::DiabetesHypertension);
        assert_eq!(f(false, true, true), ChronicClass::HypertensionOnly);
        assert_eq!(f(false, false, true), ChronicClass::Other);
    }
}
