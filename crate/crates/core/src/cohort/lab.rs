//! Lab item catalog and per-encounter lab panels.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The blood test items used as model inputs, in catalog order.
pub const CATALOG_ITEMS: [&str; 31] = [
    "eGFR (MDRD)",
    "CRP",
    "High Sensitivity CRP",
    "HDL Cholesterol",
    "LDL Cholesterol",
    "Glucose PC 120min",
    "Glucose PC 90min",
    "Glucose random",
    "Apolipoprotein A1",
    "Glucose PC 15 min",
    "Cholesterol T",
    "Creatinine",
    "Glucose random (POCT)",
    "Na",
    "Glucose PC",
    "Glucose AC",
    "HGH (Growth Hormone)",
    "Total LDH",
    "Glucose PC 180min",
    "HbA1c",
    "C-Peptide 6min",
    "Glucose PC 60min",
    "BUN",
    "Glucose AC (POCT)",
    "K",
    "eGFR (CKD-EPI Cystatin C)",
    "Glucose PC 30min",
    "Creatinine (POCT)",
    "ALT (SGPT)",
    "AST (SGOT)",
    "Triglyceride",
];

/// Checks that a lab item name can be textualized unambiguously.
pub fn validate_item_name(name: &str) -> Result<()> {
    if name.trim().is_empty() || name.trim() != name {
        return Err(Error::Data(format!("invalid lab item name {name:?}")));
    }
    if name.contains(':') || name.contains(',') || name.contains('\n') {
        return Err(Error::Data(format!(
            "lab item name {name:?} may not contain ':', ',' or newlines"
        )));
    }
    Ok(())
}

/// Ordered set of lab item names a lab encoder is aligned to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabCatalog {
    items: Vec<String>,
}

impl Default for LabCatalog {
    fn default() -> Self {
        Self {
            items: CATALOG_ITEMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabCatalog {
    pub fn new(items: Vec<String>) -> Result<Self> {
        for (i, name) in items.iter().enumerate() {
            validate_item_name(name)?;
            if items[..i].contains(name) {
                return Err(Error::Config(format!("duplicate catalog item {name}")));
            }
        }
        if items.is_empty() {
            return Err(Error::Config("lab catalog is empty".into()));
        }
        Ok(Self { items })
    }

    /// The default catalog followed by `extras` not already in it.
    pub fn with_extras(extras: &[String]) -> Result<Self> {
        let mut items = Self::default().items;
        for e in extras {
            if !items.contains(e) {
                items.push(e.clone());
            }
        }
        Self::new(items)
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.items.iter().position(|n| n == name)
    }
}

/// Unit tag for well-known items; `None` for unitless or unknown items.
pub fn unit_for(name: &str) -> Option<&'static str> {
    let unit = match name {
        n if n.starts_with("Glucose") => "mg/dL",
        "HbA1c" => "%",
        "HDL Cholesterol" | "LDL Cholesterol" | "Cholesterol T" | "Triglyceride" => "mg/dL",
        "Apolipoprotein A1" => "mg/dL",
        "BUN" => "mg/dL",
        "Creatinine" | "Creatinine (POCT)" => "mg/dL",
        "eGFR (MDRD)" | "eGFR (CKD-EPI Cystatin C)" | "Estimated GFR(MDRD)" => "mL/min/1.73m2",
        "CRP" | "High Sensitivity CRP" => "mg/L",
        "Na" | "K" => "mmol/L",
        "ALT (SGPT)" | "AST (SGOT)" | "Total LDH" => "U/L",
        "HGH (Growth Hormone)" => "ng/mL",
        "C-Peptide 6min" => "ng/mL",
        "Free T4" => "ng/dL",
        "TSH" => "uIU/mL",
        "Uric Acid" => "mg/dL",
        _ => return None,
    };
    Some(unit)
}

/// Parses a plain decimal literal such as `148`, `1.450` or `-0.5`.
pub fn parse_decimal(raw: &str) -> Option<f64> {
    let body = raw.strip_prefix('-').unwrap_or(raw);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return None;
    }
    raw.parse().ok()
}

/// One recorded lab result: the value exactly as written plus its parse.
#[derive(Debug, Clone, PartialEq)]
pub struct LabValue {
    raw: String,
    value: Option<f64>,
    unit: Option<&'static str>,
}

impl LabValue {
    pub fn raw(&self) -> &str {
        &self.raw
    }

    /// Numeric value when the raw string is a decimal literal.
    pub fn value(&self) -> Option<f64> {
        self.value
    }

    pub fn unit(&self) -> Option<&'static str> {
        self.unit
    }
}

/// Lab results for one encounter, keyed by item name in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabPanel {
    entries: IndexMap<String, LabValue>,
}

impl LabPanel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an item. Names must be unique and raw values must be free of
    /// separators so the textual form stays parseable.
    pub fn insert(&mut self, name: impl Into<String>, raw: impl Into<String>) -> Result<()> {
        let name = name.into();
        let raw = raw.into();
        validate_item_name(&name)?;
        if raw.trim().is_empty() || raw.trim() != raw || raw.contains(',') || raw.contains('\n') {
            return Err(Error::Data(format!("invalid raw value {raw:?} for {name}")));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::Data(format!("duplicate lab item {name}")));
        }
        let value = parse_decimal(&raw);
        let unit = unit_for(&name);
        self.entries.insert(name, LabValue { raw, value, unit });
        Ok(())
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut p = Self::new();
        for (k, v) in pairs {
            p.insert(k, v)?;
        }
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Option<&LabValue> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<LabValue> {
        self.entries.shift_remove(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &LabValue)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// `(name, raw)` pairs in panel order.
    pub fn raw_pairs(&self) -> Vec<(String, String)> {
        self.entries
            .iter()
            .map(|(k, v)| (k.clone(), v.raw.clone()))
            .collect()
    }
}

impl Serialize for LabPanel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, &v.raw)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for LabPanel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: IndexMap<String, String> = IndexMap::deserialize(d)?;
        LabPanel::from_pairs(raw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_parsing_is_strict() {
        assert_eq!(parse_decimal("1.450"), Some(1.45));
        assert_eq!(parse_decimal("57"), Some(57.0));
        assert_eq!(parse_decimal("-0.5"), Some(-0.5));
        for bad in ["", ".5", "5.", "1e3", "<5", "NaN", "1.2.3", "+1"] {
            assert_eq!(parse_decimal(bad), None, "{bad}");
        }
    }

    #[test]
    fn panel_preserves_raw_strings_and_order() {
        let p = LabPanel::from_pairs([("TSH", "1.450"), ("Free T4", "1.42")]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"TSH":"1.450","Free T4":"1.42"}"#);
        let back: LabPanel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
        assert_eq!(back.get("TSH").unwrap().value(), Some(1.45));
        assert_eq!(back.get("TSH").unwrap().unit(), Some("uIU/mL"));
    }

    #[test]
    fn panel_rejects_duplicates_and_separators() {
        let mut p = LabPanel::new();
        p.insert("K", "4.5").unwrap();
        assert!(p.insert("K", "4.6").is_err());
        assert!(p.insert("A:B", "1").is_err());
        assert!(p.insert("A, B", "1").is_err());
        assert!(p.insert("Na", "1,000").is_err());
        assert!(p.insert("Na", "").is_err());
    }

    #[test]
    fn non_numeric_raw_values_are_kept() {
        let p = LabPanel::from_pairs([("CRP", "<0.5")]).unwrap();
        assert_eq!(p.get("CRP").unwrap().value(), None);
        assert_eq!(p.get("CRP").unwrap().raw(), "<0.5");
    }

    #[test]
    fn catalog_has_unique_valid_names() {
        let c = LabCatalog::default();
        assert_eq!(c.len(), 31);
        assert!(LabCatalog::new(c.items().to_vec()).is_ok());
        assert_eq!(c.position("Glucose AC"), Some(15));
        let ext = LabCatalog::with_extras(&["TSH".into(), "K".into()]).unwrap();
        assert_eq!(ext.len(), 32);
    }
}
