//! Synthetic cohort generator.
//!
//! Each patient gets latent condition flags, a run of dated encounters and,
//! for diabetic patients, an onset date. Lab values are drawn from per-item
//! Gaussians shifted by the active conditions and rounded to the item's
//! usual precision. Values of rule items are then constrained so that the
//! label rule applied to the rounded panel reproduces the intended state:
//! a diabetic encounter has a driver item at or above its threshold, and a
//! non-diabetic encounter has every present rule item strictly below.
//!
//! Every patient draws from its own ChaCha stream `(seed, patient index)`,
//! so the output does not depend on how generation is scheduled.

use chrono::{Duration, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::label::{assign_binary_label, assign_multiclass_label, ConditionFlags, LabelRule};
use super::lab::{parse_decimal, validate_item_name, LabPanel};
use super::record::{BinaryLabel, EncounterRecord};
use crate::error::{Error, Result};

/// Gaussian model of one lab item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemDistribution {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// Digits after the decimal point in the recorded string.
    pub decimals: u32,
    #[serde(default)]
    pub diabetes_shift: f64,
    #[serde(default)]
    pub hypertension_shift: f64,
    #[serde(default)]
    pub hyperlipidemia_shift: f64,
    /// Probability the item is absent from a panel.
    pub missingness: f64,
}

impl ItemDistribution {
    #[allow(clippy::too_many_arguments)]
    fn new(name: &str, mean: f64, sd: f64, decimals: u32, d: f64, h: f64, l: f64) -> Self {
        Self {
            name: name.into(),
            mean,
            sd,
            decimals,
            diabetes_shift: d,
            hypertension_shift: h,
            hyperlipidemia_shift: l,
            missingness: 0.3,
        }
    }

    fn mean_for(&self, flags: ConditionFlags) -> f64 {
        let mut m = self.mean;
        if flags.diabetes {
            m += self.diabetes_shift;
        }
        if flags.hypertension {
            m += self.hypertension_shift;
        }
        if flags.hyperlipidemia {
            m += self.hyperlipidemia_shift;
        }
        m
    }
}

/// Distributions for every catalog item.
pub fn default_item_distributions() -> Vec<ItemDistribution> {
    use ItemDistribution as I;
    vec![
        I::new("eGFR (MDRD)", 85.0, 20.0, 0, -8.0, -10.0, 0.0),
        I::new("CRP", 3.0, 2.0, 2, 1.0, 0.5, 0.5),
        I::new("High Sensitivity CRP", 2.0, 1.5, 2, 0.8, 0.4, 0.6),
        I::new("HDL Cholesterol", 52.0, 12.0, 0, -6.0, -2.0, -8.0),
        I::new("LDL Cholesterol", 105.0, 25.0, 0, 8.0, 5.0, 45.0),
        I::new("Glucose PC 120min", 125.0, 25.0, 0, 80.0, 0.0, 0.0),
        I::new("Glucose PC 90min", 130.0, 25.0, 0, 80.0, 0.0, 0.0),
        I::new("Glucose random", 110.0, 20.0, 0, 70.0, 0.0, 0.0),
        I::new("Apolipoprotein A1", 140.0, 25.0, 0, -5.0, 0.0, -10.0),
        I::new("Glucose PC 15 min", 120.0, 20.0, 0, 60.0, 0.0, 0.0),
        I::new("Cholesterol T", 180.0, 30.0, 0, 10.0, 5.0, 60.0),
        I::new("Creatinine", 0.9, 0.2, 2, 0.1, 0.25, 0.0),
        I::new("Glucose random (POCT)", 112.0, 20.0, 0, 70.0, 0.0, 0.0),
        I::new("Na", 140.0, 3.0, 0, 0.0, 1.0, 0.0),
        I::new("Glucose PC", 128.0, 25.0, 0, 75.0, 0.0, 0.0),
        I::new("Glucose AC", 95.0, 10.0, 0, 55.0, 0.0, 0.0),
        I::new("HGH (Growth Hormone)", 1.5, 1.0, 2, 0.0, 0.0, 0.0),
        I::new("Total LDH", 180.0, 35.0, 0, 5.0, 0.0, 0.0),
        I::new("Glucose PC 180min", 110.0, 20.0, 0, 70.0, 0.0, 0.0),
        I::new("HbA1c", 5.5, 0.4, 1, 1.8, 0.0, 0.0),
        I::new("C-Peptide 6min", 2.0, 0.7, 2, 0.5, 0.0, 0.0),
        I::new("Glucose PC 60min", 140.0, 25.0, 0, 85.0, 0.0, 0.0),
        I::new("BUN", 14.0, 4.0, 0, 2.0, 3.0, 0.0),
        I::new("Glucose AC (POCT)", 97.0, 11.0, 0, 55.0, 0.0, 0.0),
        I::new("K", 4.2, 0.35, 1, 0.1, 0.1, 0.0),
        I::new("eGFR (CKD-EPI Cystatin C)", 88.0, 20.0, 0, -8.0, -10.0, 0.0),
        I::new("Glucose PC 30min", 135.0, 25.0, 0, 80.0, 0.0, 0.0),
        I::new("Creatinine (POCT)", 0.9, 0.2, 2, 0.1, 0.25, 0.0),
        I::new("ALT (SGPT)", 25.0, 10.0, 0, 6.0, 2.0, 4.0),
        I::new("AST (SGOT)", 24.0, 8.0, 0, 4.0, 2.0, 3.0),
        I::new("Triglyceride", 120.0, 40.0, 0, 35.0, 10.0, 90.0),
    ]
}

/// Comorbidity mixture behind the five-way class.
///
/// `diabetic` is over {diabetes only, + hypertension, + hyperlipidemia};
/// `nondiabetic` is over {hypertension only, other}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixture {
    pub diabetic: [f64; 3],
    pub nondiabetic: [f64; 2],
    /// Chance that an `other` patient carries a hyperlipidemia flag.
    pub other_hyperlipidemia_rate: f64,
}

impl Default for ClassMixture {
    fn default() -> Self {
        Self {
            diabetic: [0.4, 0.35, 0.25],
            nondiabetic: [0.3, 0.7],
            other_hyperlipidemia_rate: 0.3,
        }
    }
}

/// Phrase bank the notes are assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteTemplates {
    pub diabetes_cues: Vec<String>,
    pub hypertension_cues: Vec<String>,
    pub hyperlipidemia_cues: Vec<String>,
    pub neutral: Vec<String>,
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl Default for NoteTemplates {
    fn default() -> Self {
        Self {
            diabetes_cues: strings(&[
                "complained of polyuria and polydipsia in recent weeks",
                "reported increased thirst and frequent urination",
                "has a family history of diabetes mellitus",
                "reported unintentional weight loss and fatigue",
                "numbness and tingling of both feet were noted",
                "was referred for poorly controlled blood sugar",
            ]),
            hypertension_cues: strings(&[
                "has underlying hypertension under amlodipine",
                "home blood pressure readings were elevated",
                "complained of morning headache with high blood pressure",
            ]),
            hyperlipidemia_cues: strings(&[
                "has hyperlipidemia and takes a statin",
                "was told of high cholesterol at a health check",
            ]),
            neutral: strings(&[
                "came to our clinic for regular follow up",
                "denied chest pain or dyspnea",
                "upon examination vital signs were stable",
                "complained of right knee pain after walking",
                "complained of floaters of the right eye",
                "was admitted for further evaluation and treatment",
                "reported mild cough for three days",
                "had a history of gout",
                "received surgery last year without complication",
                "denied fever or chills",
            ]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoteConfig {
    /// Probability a diabetic encounter's note carries a diabetes cue.
    pub diabetes_cue_rate: f64,
    /// Probability a non-diabetic encounter's note carries one anyway.
    pub false_cue_rate: f64,
    /// Probability a comorbidity is mentioned when present.
    pub comorbidity_cue_rate: f64,
    /// Probability the note is left empty.
    pub empty_rate: f64,
    pub templates: NoteTemplates,
}

impl Default for NoteConfig {
    fn default() -> Self {
        Self {
            diabetes_cue_rate: 0.6,
            false_cue_rate: 0.1,
            comorbidity_cue_rate: 0.7,
            empty_rate: 0.0,
            templates: NoteTemplates::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub encounters_per_patient: usize,
    /// Fraction of patients with diabetes.
    pub positive_rate: f64,
    pub class_mixture: ClassMixture,
    /// Items generated, in panel order.
    pub items: Vec<ItemDistribution>,
    /// Preferred rule item to carry a diabetic encounter over threshold.
    pub signal_item: String,
    pub notes: NoteConfig,
    pub rule: LabelRule,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 1000,
            encounters_per_patient: 1,
            positive_rate: 0.2,
            class_mixture: ClassMixture::default(),
            items: default_item_distributions(),
            signal_item: "Glucose AC".into(),
            notes: NoteConfig::default(),
            rule: LabelRule::default(),
            seed: 0,
        }
    }
}

/// Named generator presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Default,
    /// Split-signal cohort used by the acceptance suite.
    Learnability,
    /// Notes classification prevalence (52,458 / 212,936).
    NotesTask,
    /// Initial-onset textual-lab prevalence (7,892 / 1,750,711).
    OnsetTask,
    /// Text + numeric prevalence (6,844 / 21,683).
    FusionTask,
}

impl Preset {
    pub fn config(self) -> SynthConfig {
        match self {
            Preset::Default => SynthConfig::default(),
            Preset::Learnability => SynthConfig::learnability(),
            Preset::NotesTask => SynthConfig {
                positive_rate: 52_458.0 / 212_936.0,
                ..SynthConfig::default()
            },
            Preset::OnsetTask => SynthConfig {
                positive_rate: 7_892.0 / 1_750_711.0,
                encounters_per_patient: 3,
                ..SynthConfig::default()
            },
            Preset::FusionTask => SynthConfig {
                positive_rate: 6_844.0 / 21_683.0,
                ..SynthConfig::default()
            },
        }
    }
}

impl SynthConfig {
    /// Ten items at 30% missingness (the signal item is always measured);
    /// fasting glucose overlaps the threshold so the lab signal is strong
    /// but not trivially separable, and notes carry a second partial signal.
    pub fn learnability() -> Self {
        let pick = ["Glucose AC", "Glucose AC (POCT)", "HbA1c", "Glucose PC 120min", "LDL Cholesterol",
            "HDL Cholesterol", "Triglyceride", "Creatinine", "BUN", "ALT (SGPT)"];
        let all = default_item_distributions();
        let mut items: Vec<ItemDistribution> = pick
            .iter()
            .map(|n| all.iter().find(|d| d.name == *n).expect("catalog item").clone())
            .collect();
        for it in &mut items {
            match it.name.as_str() {
                "Glucose AC" => {
                    it.mean = 108.0;
                    it.sd = 12.0;
                    it.diabetes_shift = 22.0;
                    it.missingness = 0.0;
                }
                "Glucose AC (POCT)" => {
                    it.mean = 104.0;
                    it.sd = 12.0;
                    it.diabetes_shift = 10.0;
                }
                "HbA1c" => it.diabetes_shift = 0.2,
                "Glucose PC 120min" => {
                    it.sd = 30.0;
                    it.diabetes_shift = 20.0;
                }
                _ => {}
            }
        }
        Self {
            n_patients: 2000,
            encounters_per_patient: 2,
            positive_rate: 0.2,
            items,
            ..Self::default()
        }
    }

    /// Sets every item's missingness, then keeps the signal item at `signal`.
    pub fn with_missingness(mut self, rate: f64, signal: Option<f64>) -> Self {
        for it in &mut self.items {
            it.missingness = if it.name == self.signal_item {
                signal.unwrap_or(rate)
            } else {
                rate
            };
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rate = |name: &str, r: f64| {
            if (0.0..=1.0).contains(&r) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be in [0,1], got {r}")))
            }
        };
        if self.n_patients == 0 {
            return Err(Error::Config("n_patients must be positive".into()));
        }
        if self.encounters_per_patient == 0 {
            return Err(Error::Config("encounters_per_patient must be positive".into()));
        }
        rate("positive_rate", self.positive_rate)?;
        rate("diabetes_cue_rate", self.notes.diabetes_cue_rate)?;
        rate("false_cue_rate", self.notes.false_cue_rate)?;
        rate("comorbidity_cue_rate", self.notes.comorbidity_cue_rate)?;
        rate("empty_rate", self.notes.empty_rate)?;
        rate("other_hyperlipidemia_rate", self.class_mixture.other_hyperlipidemia_rate)?;
        for (name, mix) in [
            ("diabetic mixture", &self.class_mixture.diabetic[..]),
            ("nondiabetic mixture", &self.class_mixture.nondiabetic[..]),
        ] {
            if mix.iter().any(|p| !(0.0..=1.0).contains(p)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} must be probabilities summing to 1")));
            }
        }
        for (i, it) in self.items.iter().enumerate() {
            validate_item_name(&it.name).map_err(|e| Error::Config(e.to_string()))?;
            if self.items[..i].iter().any(|o| o.name == it.name) {
                return Err(Error::Config(format!("duplicate item {}", it.name)));
            }
            if !(it.sd >= 0.0 && it.sd.is_finite()) {
                return Err(Error::Config(format!("degenerate Gaussian for {}: sd = {}", it.name, it.sd)));
            }
            if !it.mean.is_finite() {
                return Err(Error::Config(format!("non-finite mean for {}", it.name)));
            }
            rate(&format!("missingness of {}", it.name), it.missingness)?;
            if it.decimals > 6 {
                return Err(Error::Config(format!("too many decimals for {}", it.name)));
            }
        }
        if self.notes.templates.neutral.is_empty() || self.notes.templates.diabetes_cues.is_empty() {
            return Err(Error::Config("note template bank needs neutral and diabetes phrases".into()));
        }
        if self.notes.empty_rate > 0.0 && self.items.iter().all(|it| it.missingness >= 1.0) {
            return Err(Error::Config("records could end up with neither notes nor labs".into()));
        }
        self.rule.validate()
    }
}

/// Generates the full cohort, patients in index order.
pub fn generate_cohort(config: &SynthConfig) -> Result<Vec<EncounterRecord>> {
    config.validate()?;
    let per_patient: Vec<Vec<EncounterRecord>> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| generate_patient(config, i))
        .collect::<Result<_>>()?;
    Ok(per_patient.into_iter().flatten().collect())
}

const WINDOW_DAYS: i64 = 5 * 365;
const ONSET_WINDOW_DAYS: i64 = 180;

fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2016, 1, 1).expect("valid date")
}

fn generate_patient(config: &SynthConfig, index: usize) -> Result<Vec<EncounterRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let diabetic = rng.random_bool(config.positive_rate);
    let mix = &config.class_mixture;
    let (hypertension, hyperlipidemia) = if diabetic {
        match pick_weighted(&mut rng, &mix.diabetic) {
            0 => (false, false),
            1 => (true, false),
            _ => (false, true),
        }
    } else {
        match pick_weighted(&mut rng, &mix.nondiabetic) {
            0 => (true, false),
            _ => (false, rng.random_bool(mix.other_hyperlipidemia_rate)),
        }
    };
    let age: u32 = rng.random_range(30..=85);
    let sex = if rng.random_bool(0.5) { "male" } else { "female" };

    let n = config.encounters_per_patient as i64;
    let span_limit = (WINDOW_DAYS - 180 * (n - 1)).max(1);
    let mut date = base_date() + Duration::days(rng.random_range(0..span_limit));
    let mut dates = Vec::with_capacity(n as usize);
    for k in 0..n {
        if k > 0 {
            date += Duration::days(rng.random_range(30..=180));
        }
        dates.push(date);
    }
    let first = dates[0];
    let last = *dates.last().expect("at least one encounter");
    let onset = diabetic.then(|| {
        let lo = first - Duration::days(90);
        lo + Duration::days(rng.random_range(0..=(last - lo).num_days()))
    });

    let patient_id = format!("P{index:06}");
    let mut onset_marked = false;
    let mut out = Vec::with_capacity(dates.len());
    for date in dates {
        let in_state = onset.is_some_and(|o| date >= o);
        let flags = ConditionFlags {
            diabetes: in_state,
            hypertension,
            hyperlipidemia,
        };
        let panel = sample_panel(config, flags, &mut rng)?;
        let label_binary = assign_binary_label(&panel, &config.rule)?;
        let onset_flag = match onset {
            Some(o) if !onset_marked && label_binary == BinaryLabel::Positive => {
                onset_marked = true;
                (date - o).num_days() < ONSET_WINDOW_DAYS
            }
            _ => false,
        };
        let mut note_text = sample_note(&config.notes, flags, age, sex, &mut rng);
        if panel.is_empty() && note_text.is_empty() {
            note_text = sample_note(
                &NoteConfig {
                    empty_rate: 0.0,
                    ..config.notes.clone()
                },
                flags,
                age,
                sex,
                &mut rng,
            );
        }
        out.push(EncounterRecord {
            patient_id: patient_id.clone(),
            date,
            note_text,
            panel,
            label_binary,
            label_multiclass: Some(assign_multiclass_label(flags)),
            onset_flag,
        });
    }
    Ok(out)
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

fn format_value(v: f64, decimals: u32) -> String {
    let v = if v <= 0.0 { 0.0 } else { v };
    format!("{:.*}", decimals as usize, v)
}

fn sample_raw(dist: &Normal<f64>, decimals: u32, rng: &mut ChaCha8Rng) -> (String, f64) {
    let raw = format_value(dist.sample(rng), decimals);
    let value = parse_decimal(&raw).expect("formatted decimal");
    (raw, value)
}

/// Rejection-samples a rounded value satisfying `accept`, falling back to `fallback`.
fn sample_constrained(
    dist: &Normal<f64>,
    decimals: u32,
    rng: &mut ChaCha8Rng,
    accept: impl Fn(f64) -> bool,
    fallback: f64,
) -> String {
    for _ in 0..256 {
        let (raw, value) = sample_raw(dist, decimals, rng);
        if accept(value) {
            return raw;
        }
    }
    format_value(fallback, decimals)
}

fn sample_panel(config: &SynthConfig, flags: ConditionFlags, rng: &mut ChaCha8Rng) -> Result<LabPanel> {
    let present: Vec<bool> = config
        .items
        .iter()
        .map(|it| !rng.random_bool(it.missingness))
        .collect();

    let rule = &config.rule;
    let driver = if flags.diabetes {
        let is_present = |name: &str| {
            config
                .items
                .iter()
                .zip(&present)
                .any(|(it, &p)| p && it.name == name)
        };
        let preferred = rule
            .threshold_for(&config.signal_item)
            .is_some()
            .then_some(config.signal_item.as_str())
            .filter(|n| is_present(n));
        preferred.or_else(|| {
            config
                .items
                .iter()
                .zip(&present)
                .find(|(it, &p)| p && rule.threshold_for(&it.name).is_some())
                .map(|(it, _)| it.name.as_str())
        })
    } else {
        None
    };

    let mut panel = LabPanel::new();
    for (it, &p) in config.items.iter().zip(&present) {
        if !p {
            continue;
        }
        let dist = Normal::new(it.mean_for(flags), it.sd)
            .map_err(|e| Error::Config(format!("{}: {e}", it.name)))?;
        let step = 10f64.powi(-(it.decimals as i32));
        let raw = match rule.threshold_for(&it.name) {
            Some(t) if driver == Some(it.name.as_str()) => {
                let up = (t / step).ceil() * step;
                sample_constrained(&dist, it.decimals, rng, |v| v >= t, up)
            }
            Some(t) if !flags.diabetes => {
                let below = ((t / step).ceil() - 1.0) * step;
                sample_constrained(&dist, it.decimals, rng, |v| v < t, below.max(0.0))
            }
            _ => sample_raw(&dist, it.decimals, rng).0,
        };
        panel.insert(it.name.clone(), raw)?;
    }
    Ok(panel)
}

fn sample_note(cfg: &NoteConfig, flags: ConditionFlags, age: u32, sex: &str, rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(cfg.empty_rate) {
        return String::new();
    }
    let t = &cfg.templates;
    let mut sentences = vec![format!("This is a {age}-year-old {sex} patient")];
    let mut cues: Vec<&String> = Vec::new();
    let cue_rate = if flags.diabetes {
        cfg.diabetes_cue_rate
    } else {
        cfg.false_cue_rate
    };
    if rng.random_bool(cue_rate) {
        cues.extend(t.diabetes_cues.choose(rng));
    }
    if flags.hypertension && rng.random_bool(cfg.comorbidity_cue_rate) {
        cues.extend(t.hypertension_cues.choose(rng));
    }
    if flags.hyperlipidemia && rng.random_bool(cfg.comorbidity_cue_rate) {
        cues.extend(t.hyperlipidemia_cues.choose(rng));
    }
    let n_neutral = rng.random_range(1..=2);
    let mut neutral: Vec<&String> = t.neutral.choose_multiple(rng, n_neutral).collect();
    neutral.extend(cues);
    // Interleave deterministically: cue position depends only on the stream.
    let len = neutral.len();
    for i in (1..len).rev() {
        let j = rng.random_range(0..=i);
        neutral.swap(i, j);
    }
    for s in neutral {
        sentences.push(format!("The patient {s}"));
    }
    let mut note = sentences.join(". ");
    note.push('.');
    note
}
