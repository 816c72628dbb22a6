//! Encounter data model, label rules, synthetic cohorts and splitting.

mod label;
pub mod lab;
mod record;
mod split;
pub mod synth;

pub use lab::{LabCatalog, LabPanel, LabValue, CATALOG_ITEMS};
pub use label::{assign_binary_label, assign_multiclass_label, ConditionFlags, LabelRule};
pub use record::{read_cohort, to_json_line, write_cohort, BinaryLabel, ChronicClass, EncounterRecord};
pub use split::{onset_task_records, split_cohort};
pub use synth::{generate_cohort, Preset, SynthConfig};
