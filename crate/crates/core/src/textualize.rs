//! Turns lab panels into `Name:value, Name:value` text and assembles model input strings.

use serde::{Deserialize, Serialize};

use crate::cohort::{EncounterRecord, LabPanel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ItemOrder {
    /// Insertion order of the panel.
    #[default]
    Panel,
    /// Byte-wise ascending item name.
    Alphabetical,
    /// Listed items first in this order, remaining items after in panel order.
    Explicit(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SerializationSpec {
    pub item_order: ItemOrder,
    pub pair_separator: String,
    pub kv_separator: String,
    /// Text placed before a non-empty lab string.
    #[serde(default)]
    pub preamble: Option<String>,
}

impl Default for SerializationSpec {
    fn default() -> Self {
        Self {
            item_order: ItemOrder::Panel,
            pair_separator: ", ".into(),
            kv_separator: ":".into(),
            preamble: None,
        }
    }
}

impl SerializationSpec {
    pub fn alphabetical() -> Self {
        Self {
            item_order: ItemOrder::Alphabetical,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair_separator.is_empty() || self.kv_separator.is_empty() {
            return Err(Error::Config("separators must be non-empty".into()));
        }
        if let ItemOrder::Explicit(items) = &self.item_order {
            for (i, it) in items.iter().enumerate() {
                if items[..i].contains(it) {
                    return Err(Error::Config(format!("duplicate item {it} in item_order")));
                }
            }
        }
        Ok(())
    }

    fn ordered<'a>(&self, panel: &'a LabPanel) -> Vec<(&'a str, &'a str)> {
        let mut pairs: Vec<(&str, &str)> = panel.iter().map(|(n, v)| (n, v.raw())).collect();
        match &self.item_order {
            ItemOrder::Panel => {}
            ItemOrder::Alphabetical => pairs.sort_by(|a, b| a.0.cmp(b.0)),
            ItemOrder::Explicit(order) => {
                let rank = |n: &str| order.iter().position(|o| o == n).unwrap_or(order.len());
                pairs.sort_by_key(|p| rank(p.0));
            }
        }
        pairs
    }
}

/// `Name:value` pairs joined by the pair separator, using raw value strings.
/// Missing items are simply absent; an empty panel yields `""`.
pub fn serialize_panel(panel: &LabPanel, spec: &SerializationSpec) -> String {
    serialize_with_spans(panel, spec).0
}

/// Like [`serialize_panel`], also returning each item's byte span in the text.
pub fn serialize_with_spans(panel: &LabPanel, spec: &SerializationSpec) -> (String, Vec<(String, (usize, usize))>) {
    let mut out = String::new();
    let mut spans = Vec::with_capacity(panel.len());
    let pairs = spec.ordered(panel);
    if pairs.is_empty() {
        return (out, spans);
    }
    if let Some(p) = &spec.preamble {
        out.push_str(p);
    }
    for (i, (name, raw)) in pairs.into_iter().enumerate() {
        if i > 0 {
            out.push_str(&spec.pair_separator);
        }
        let start = out.len();
        out.push_str(name);
        out.push_str(&spec.kv_separator);
        out.push_str(raw);
        spans.push((name.to_string(), (start, out.len())));
    }
    (out, spans)
}

/// Inverse of [`serialize_panel`]: recovers `(name, raw)` pairs.
pub fn parse_serialized(text: &str, spec: &SerializationSpec) -> Result<Vec<(String, String)>> {
    let body = match &spec.preamble {
        Some(p) if !text.is_empty() => text
            .strip_prefix(p.as_str())
            .ok_or_else(|| Error::Data("lab text does not start with the preamble".into()))?,
        _ => text,
    };
    if body.is_empty() {
        return Ok(Vec::new());
    }
    body.split(spec.pair_separator.as_str())
        .map(|pair| {
            pair.split_once(spec.kv_separator.as_str())
                .map(|(n, v)| (n.to_string(), v.to_string()))
                .ok_or_else(|| Error::Data(format!("malformed lab pair {pair:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    NotesOnly,
    LabsTextOnly,
    NotesPlusLabsText,
}

/// Text fed to the text encoder for `record` under `mode`.
pub fn build_input(record: &EncounterRecord, mode: InputMode, spec: &SerializationSpec) -> Result<String> {
    let note = record.note_text.trim();
    let labs = serialize_panel(&record.panel, spec);
    match mode {
        InputMode::NotesOnly if note.is_empty() => Err(Error::Data(format!(
            "record {} has no note text",
            record.record_id()
        ))),
        InputMode::NotesOnly => Ok(note.to_string()),
        InputMode::LabsTextOnly if labs.is_empty() => Err(Error::Data(format!(
            "record {} has no lab values",
            record.record_id()
        ))),
        InputMode::LabsTextOnly => Ok(labs),
        InputMode::NotesPlusLabsText => match (note.is_empty(), labs.is_empty()) {
            (true, true) => Err(Error::Data(format!("record {} is empty", record.record_id()))),
            (false, true) => Ok(note.to_string()),
            (true, false) => Ok(labs),
            (false, false) => Ok(format!("{note} {labs}")),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::BinaryLabel;
    use chrono::NaiveDate;

    fn record(note: &str, pairs: &[(&str, &str)]) -> EncounterRecord {
        EncounterRecord {
            patient_id: "P1".into(),
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
            note_text: note.into(),
            panel: LabPanel::from_pairs(pairs.iter().copied()).unwrap(),
            label_binary: BinaryLabel::Unlabeled,
            label_multiclass: None,
            onset_flag: false,
        }
    }

    #[test]
    fn table_style_string() {
        let panel = LabPanel::from_pairs([("Free T4", "1.42"), ("TSH", "1.450"), ("HDL Cholesterol", "57")]).unwrap();
        assert_eq!(
            serialize_panel(&panel, &SerializationSpec::default()),
            "Free T4:1.42, TSH:1.450, HDL Cholesterol:57"
        );
    }

    #[test]
    fn empty_and_missing() {
        assert_eq!(serialize_panel(&LabPanel::new(), &SerializationSpec::default()), "");
        let panel = LabPanel::from_pairs([("Glucose AC", "148")]).unwrap();
        assert_eq!(serialize_panel(&panel, &SerializationSpec::default()), "Glucose AC:148");
    }

    #[test]
    fn orders() {
        let panel = LabPanel::from_pairs([("TSH", "1"), ("BUN", "2"), ("K", "3")]).unwrap();
        assert_eq!(serialize_panel(&panel, &SerializationSpec::alphabetical()), "BUN:2, K:3, TSH:1");
        let spec = SerializationSpec {
            item_order: ItemOrder::Explicit(vec!["K".into()]),
            ..Default::default()
        };
        assert_eq!(serialize_panel(&panel, &spec), "K:3, TSH:1, BUN:2");
        let bad = SerializationSpec {
            item_order: ItemOrder::Explicit(vec!["K".into(), "K".into()]),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn preamble_hook_and_spans() {
        let spec = SerializationSpec {
            preamble: Some("Labs: ".into()),
            ..Default::default()
        };
        let panel = LabPanel::from_pairs([("K", "4.5"), ("Na", "140")]).unwrap();
        let (text, spans) = serialize_with_spans(&panel, &spec);
        assert_eq!(text, "Labs: K:4.5, Na:140");
        assert_eq!(&text[spans[1].1 .0..spans[1].1 .1], "Na:140");
        assert_eq!(parse_serialized(&text, &spec).unwrap(), panel.raw_pairs());
        assert_eq!(serialize_panel(&LabPanel::new(), &spec), "");
    }

    #[test]
    fn build_input_modes() {
        let spec = SerializationSpec::default();
        let r = record("Seen today.", &[("Free T4", "1.42"), ("TSH", "1.450")]);
        assert_eq!(build_input(&r, InputMode::LabsTextOnly, &spec).unwrap(), "Free T4:1.42, TSH:1.450");
        assert_eq!(build_input(&r, InputMode::NotesOnly, &spec).unwrap(), "Seen today.");
        assert_eq!(
            build_input(&r, InputMode::NotesPlusLabsText, &spec).unwrap(),
            "Seen today. Free T4:1.42, TSH:1.450"
        );
        let empty_note = record("", &[("K", "4")]);
        assert!(matches!(build_input(&empty_note, InputMode::NotesOnly, &spec), Err(Error::Data(_))));
        let no_labs = record("Seen today.", &[]);
        assert_eq!(build_input(&no_labs, InputMode::NotesPlusLabsText, &spec).unwrap(), "Seen today.");
        assert!(build_input(&no_labs, InputMode::LabsTextOnly, &spec).is_err());
    }
}
