//! The full classifier: encoders, fusion and head behind one parameter store.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{softmax_row, FusionParams, Head};
use crate::cohort::{BinaryLabel, EncounterRecord, LabCatalog};
use crate::error::{Error, Result};
use crate::lab_encoder::{vectorize_panel, LabEncoderConfig, LabEncoderParams, LabVector, NormStats};
use crate::nn::Builder;
use crate::numeric::{ParamStore, Tape, Tensor, Var};
use crate::text::{tokenize, EncoderConfig, EncoderParams, Encoded, Vocab};
use crate::textualize::{build_input, serialize_with_spans, InputMode, SerializationSpec};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which inputs feed the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Note text through the text encoder plus numeric labs through the lab encoder.
    Fusion,
    /// Note text only.
    TextOnly,
    /// Numeric labs only.
    LabsOnly,
    /// Textualized labs through the text encoder.
    LabsText,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Fusion, Mode::TextOnly, Mode::LabsOnly, Mode::LabsText];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Fusion => "fusion",
            Mode::TextOnly => "text_only",
            Mode::LabsOnly => "labs_only",
            Mode::LabsText => "labs_text",
        }
    }

    pub fn uses_text(self) -> bool {
        self != Mode::LabsOnly
    }

    pub fn uses_lab_vector(self) -> bool {
        matches!(self, Mode::Fusion | Mode::LabsOnly)
    }

    pub fn default_text_input(self) -> Option<InputMode> {
        match self {
            Mode::Fusion | Mode::TextOnly => Some(InputMode::NotesOnly),
            Mode::LabsText => Some(InputMode::LabsTextOnly),
            Mode::LabsOnly => None,
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}; expected fusion, text_only, labs_only or labs_text")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Binary,
    Multiclass,
}

impl Task {
    pub fn n_classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multiclass => 5,
        }
    }

    /// Class index of `record`, `None` when unlabeled for this task.
    pub fn target(self, record: &EncounterRecord) -> Option<usize> {
        match self {
            Task::Binary => match record.label_binary {
                BinaryLabel::Unlabeled => None,
                l => l.class_index(),
            },
            Task::Multiclass => record.label_multiclass.map(|c| c.index()),
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multiclass" => Ok(Task::Multiclass),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected binary or multiclass"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub mode: Mode,
    pub task: Task,
    pub encoder: EncoderConfig,
    pub lab_encoder: LabEncoderConfig,
    pub fusion_heads: usize,
    /// When false, fusion mode feeds `[text ‖ lab]` to the head without attention.
    pub fusion_attention: bool,
    /// Head hidden width; `None` means `d_model`.
    pub head_hidden: Option<usize>,
    pub serialization: SerializationSpec,
    /// Overrides the text built for the text encoder.
    pub text_input: Option<InputMode>,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Fusion,
            task: Task::Binary,
            encoder: EncoderConfig::default(),
            lab_encoder: LabEncoderConfig::default(),
            fusion_heads: 4,
            fusion_attention: true,
            head_hidden: None,
            serialization: SerializationSpec::default(),
            text_input: None,
            vocab_min_freq: 1,
            vocab_max_size: 8192,
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.encoder.d_model
    }

    pub fn text_input(&self) -> Option<InputMode> {
        if self.mode.uses_text() {
            self.text_input.or(self.mode.default_text_input())
        } else {
            None
        }
    }

    pub fn head_width(&self) -> usize {
        let d = self.d_model();
        match self.mode {
            Mode::Fusion if self.fusion_attention => 3 * d,
            Mode::Fusion => 2 * d,
            _ => d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.serialization.validate()?;
        if self.vocab_max_size < 2 {
            return Err(Error::Config("vocab_max_size must be at least 2".into()));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::Config("head_hidden must be positive".into()));
        }
        Ok(())
    }
}

/// Text side of a prepared record.
#[derive(Debug, Clone, PartialEq)]
pub struct TextInput {
    pub source: String,
    pub encoded: Encoded,
    /// Byte spans of each lab item inside `source` when labs were textualized.
    pub lab_spans: Vec<(String, (usize, usize))>,
}

/// A record converted to model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub record_id: String,
    pub text: Option<TextInput>,
    pub labs: Option<LabVector>,
}

/// Named parameters of the whole model plus the artifacts needed to
/// turn records into inputs.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub vocab: Option<Vocab>,
    pub stats: Option<NormStats>,
    pub text: Option<EncoderParams>,
    pub lab: Option<LabEncoderParams>,
    pub fusion: Option<FusionParams>,
    pub head: Head,
}

struct Parts {
    text: Option<EncoderParams>,
    lab: Option<LabEncoderParams>,
    fusion: Option<FusionParams>,
    head: Head,
}

fn build_parts(config: &ModelConfig, vocab: Option<&Vocab>, stats: Option<&NormStats>, b: &mut Builder<'_>) -> Result<Parts> {
    config.validate()?;
    let d = config.d_model();
    let text = match (config.mode.uses_text(), vocab) {
        (true, Some(v)) => Some(EncoderParams::build(b, "text", v.len(), &config.encoder)?),
        (true, None) => return Err(Error::Config(format!("mode {} needs a vocabulary", config.mode.name()))),
        (false, _) => None,
    };
    let lab = match (config.mode.uses_lab_vector(), stats) {
        (true, Some(s)) => {
            s.validate()?;
            Some(LabEncoderParams::build(b, "lab", s.len(), d, &config.lab_encoder)?)
        }
        (true, None) => {
            return Err(Error::Config(format!(
                "mode {} needs normalization statistics",
                config.mode.name()
            )))
        }
        (false, _) => None,
    };
    let fusion = if config.mode == Mode::Fusion && config.fusion_attention {
        Some(FusionParams::build(b, "fusion", d, config.fusion_heads)?)
    } else {
        None
    };
    let head = Head::build(
        b,
        "head",
        config.head_width(),
        config.head_hidden.unwrap_or(d),
        config.task.n_classes(),
    )?;
    Ok(Parts { text, lab, fusion, head })
}

#[derive(Serialize, Deserialize)]
struct StoredParam {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    config: ModelConfig,
    vocab_hash: Option<String>,
    vocab_size: Option<usize>,
    norm_stats: Option<NormStats>,
    params: Vec<StoredParam>,
}

/// Vocabulary file stored next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".vocab.txt");
    PathBuf::from(s)
}

impl FusionModel {
    /// Fresh parameters drawn from `seed`.
    pub fn new(config: ModelConfig, vocab: Option<Vocab>, stats: Option<NormStats>, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = build_parts(
            &config,
            vocab.as_ref(),
            stats.as_ref(),
            &mut Builder::Init {
                store: &mut store,
                rng: &mut rng,
            },
        )?;
        Ok(Self {
            config,
            store,
            vocab: if parts.text.is_some() { vocab } else { None },
            stats: if parts.lab.is_some() { stats } else { None },
            text: parts.text,
            lab: parts.lab,
            fusion: parts.fusion,
            head: parts.head,
        })
    }

    /// Fits the vocabulary and normalization statistics on `train` and
    /// initializes parameters.
    pub fn for_training(config: ModelConfig, train: &[EncounterRecord], catalog: &LabCatalog, seed: u64) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let vocab = match config.text_input() {
            Some(input) => {
                let corpus: Vec<String> = train
                    .iter()
                    .filter_map(|r| build_input(r, input, &config.serialization).ok())
                    .collect();
                if corpus.is_empty() {
                    return Err(Error::Data("no training record has text for this mode".into()));
                }
                Some(crate::text::build_vocab(&corpus, config.vocab_min_freq, config.vocab_max_size)?)
            }
            None => None,
        };
        let stats = config.mode.uses_lab_vector().then(|| {
            NormStats::fit(
                train.iter().map(|r| &r.panel),
                catalog,
                &format!("training split, {} records", train.len()),
            )
        });
        Self::new(config, vocab, stats, seed)
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes
    }

    pub fn prepare(&self, record: &EncounterRecord) -> Result<Prepared> {
        let text = match (self.config.text_input(), &self.vocab, &self.text) {
            (Some(input), Some(vocab), Some(enc)) => {
                let source = build_input(record, input, &self.config.serialization)?;
                let mut lab_spans = Vec::new();
                if input != InputMode::NotesOnly {
                    let (labs, spans) = serialize_with_spans(&record.panel, &self.config.serialization);
                    if !labs.is_empty() {
                        let offset = source.len() - labs.len();
                        lab_spans = spans.into_iter().map(|(n, (s, e))| (n, (s + offset, e + offset))).collect();
                    }
                }
                let encoded = tokenize(&source, vocab, enc.config.max_len);
                if encoded.n_tokens() == 0 {
                    return Err(Error::Data(format!("record {} has no tokens", record.record_id())));
                }
                Some(TextInput {
                    source,
                    encoded,
                    lab_spans,
                })
            }
            _ => None,
        };
        let labs = match &self.stats {
            Some(stats) => {
                let v = vectorize_panel(&record.panel, stats);
                if v.mask.iter().all(|&m| m == 0.0) && self.config.mode == Mode::LabsOnly {
                    return Err(Error::Data(format!(
                        "record {} has no catalog lab values",
                        record.record_id()
                    )));
                }
                Some(v)
            }
            None => None,
        };
        Ok(Prepared {
            record_id: record.record_id(),
            text,
            labs,
        })
    }

    /// Head input assembled from precomputed modality embeddings. Any
    /// `1 × d_model` source can supply them.
    pub fn features_from_embeddings<'p>(&'p self, tape: &Tape<'p>, text: Option<Var>, lab: Option<Var>) -> Result<Var> {
        let missing = |what: &str| Error::Contract(format!("mode {} needs a {what} embedding", self.config.mode.name()));
        match self.config.mode {
            Mode::Fusion => {
                let (t, l) = (text.ok_or_else(|| missing("text"))?, lab.ok_or_else(|| missing("lab"))?);
                match &self.fusion {
                    Some(f) => f.fuse(tape, &self.store, t, l),
                    None => tape.concat_cols(&[t, l]),
                }
            }
            Mode::TextOnly | Mode::LabsText => text.ok_or_else(|| missing("text")),
            Mode::LabsOnly => lab.ok_or_else(|| missing("lab")),
        }
    }

    /// `1 × C` logits for a prepared record, recorded on `tape`.
    pub fn logits<'p>(&'p self, tape: &Tape<'p>, x: &Prepared) -> Result<Var> {
        self.logits_traced(tape, x).map(|t| t.0)
    }

    /// Logits plus the token-embedding node of the text encoder, if any.
    pub fn logits_traced<'p>(&'p self, tape: &Tape<'p>, x: &Prepared) -> Result<(Var, Option<Var>)> {
        let (text, tokens) = match (&self.text, &x.text) {
            (Some(enc), Some(t)) => {
                let (pooled, tokens) = enc.forward_with_tokens(tape, &self.store, &t.encoded.ids, &t.encoded.mask)?;
                (Some(pooled), Some(tokens))
            }
            (Some(_), None) => return Err(Error::Contract("prepared record lacks text input".into())),
            _ => (None, None),
        };
        let lab = match (&self.lab, &x.labs) {
            (Some(enc), Some(v)) => Some(enc.forward(tape, &self.store, v)?),
            (Some(_), None) => return Err(Error::Contract("prepared record lacks lab input".into())),
            _ => None,
        };
        let features = self.features_from_embeddings(tape, text, lab)?;
        Ok((self.head.classify(tape, &self.store, features)?, tokens))
    }

    pub fn predict_prepared(&self, x: &Prepared) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let logits = self.logits(&tape, x)?;
        let p = softmax_row(tape.value(logits).data());
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite probabilities for {}", x.record_id)));
        }
        Ok(p)
    }

    /// Class probabilities for `record`.
    pub fn forward(&self, record: &EncounterRecord) -> Result<Vec<f64>> {
        self.predict_prepared(&self.prepare(record)?)
    }

    /// Raw fusion attention matrices per head, `None` outside attention fusion.
    pub fn fusion_attention(&self, x: &Prepared) -> Result<Option<Vec<Tensor>>> {
        let (Some(f), Some(te), Some(le)) = (&self.fusion, &self.text, &self.lab) else {
            return Ok(None);
        };
        let (Some(t), Some(l)) = (&x.text, &x.labs) else {
            return Err(Error::Contract("prepared record lacks fusion inputs".into()));
        };
        let text = te.encode_text(&self.store, &t.encoded.ids, &t.encoded.mask)?;
        let lab = le.encode_labs(&self.store, l)?;
        f.attention_weights(&self.store, &text, &lab).map(Some)
    }

    /// Writes the checkpoint JSON and, for text modes, the vocabulary file
    /// at [`vocab_path`].
    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = Checkpoint {
            format_version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            vocab_hash: self.vocab.as_ref().map(Vocab::hash),
            vocab_size: self.vocab.as_ref().map(Vocab::len),
            norm_stats: self.stats.clone(),
            params: self
                .store
                .iter()
                .map(|(_, name, t)| StoredParam {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        };
        if let Some(v) = &self.vocab {
            v.save(&vocab_path(path))?;
        }
        fs::write(path, serde_json::to_string(&ckpt)?)?;
        Ok(())
    }

    /// Loads a checkpoint, verifying the vocabulary hash and every parameter shape.
    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {}",
                ckpt.format_version
            )));
        }
        let vocab = match &ckpt.vocab_hash {
            Some(hash) => {
                let v = Vocab::load(&vocab_path(path))?;
                if &v.hash() != hash {
                    return Err(Error::Data("vocabulary file does not match the checkpoint hash".into()));
                }
                Some(v)
            }
            None => None,
        };
        let mut store = ParamStore::new();
        for p in ckpt.params {
            store.add(p.name, Tensor::new(p.shape, p.data)?)?;
        }
        let parts = build_parts(&ckpt.config, vocab.as_ref(), ckpt.norm_stats.as_ref(), &mut Builder::Bind { store: &store })?;
        let expected = FusionModel::new(ckpt.config.clone(), vocab.clone(), ckpt.norm_stats.clone(), 0)?;
        if expected.store.len() != store.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} parameters, model expects {}",
                store.len(),
                expected.store.len()
            )));
        }
        Ok(Self {
            config: ckpt.config,
            store,
            vocab,
            stats: ckpt.norm_stats,
            text: parts.text,
            lab: parts.lab,
            fusion: parts.fusion,
            head: parts.head,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{LabPanel, CATALOG_ITEMS};
    use chrono::NaiveDate;

    fn record(note: &str, labs: &[(&str, &str)], label: BinaryLabel) -> EncounterRecord {
        EncounterRecord {
            patient_id: "P000001".into(),
            date: NaiveDate::from_ymd_opt(2021, 3, 4).unwrap(),
            note_text: note.into(),
            panel: LabPanel::from_pairs(labs.iter().copied()).unwrap(),
            label_binary: label,
            label_multiclass: None,
            onset_flag: false,
        }
    }

    fn tiny(mode: Mode) -> ModelConfig {
        ModelConfig {
            mode,
            encoder: EncoderConfig {
                d_model: 8,
                n_heads: 2,
                n_layers: 1,
                ffn_mult: 2,
                max_len: 16,
                ..EncoderConfig::default()
            },
            lab_encoder: LabEncoderConfig { hidden: vec![6, 5] },
            fusion_heads: 2,
            ..ModelConfig::default()
        }
    }

    fn train_set() -> Vec<EncounterRecord> {
        vec![
            record("Polyuria reported.", &[("Glucose AC", "150"), ("LDL", "120")], BinaryLabel::Positive),
            record("Routine visit.", &[("Glucose AC", "90")], BinaryLabel::Negative),
        ]
    }

    #[test]
    fn every_mode_gives_a_distribution() {
        let catalog = LabCatalog::default();
        for mode in Mode::ALL {
            let m = FusionModel::for_training(tiny(mode), &train_set(), &catalog, 1).unwrap();
            for r in train_set() {
                let p = m.forward(&r).unwrap();
                assert_eq!(p.len(), 2);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn text_only_rejects_empty_note() {
        let m = FusionModel::for_training(tiny(Mode::TextOnly), &train_set(), &LabCatalog::default(), 1).unwrap();
        let r = record("", &[("Glucose AC", "100")], BinaryLabel::Negative);
        assert!(matches!(m.forward(&r), Err(Error::Data(_))));
    }

    #[test]
    fn labs_text_spans_cover_items() {
        let mut cfg = tiny(Mode::LabsText);
        cfg.text_input = Some(InputMode::NotesPlusLabsText);
        let m = FusionModel::for_training(cfg, &train_set(), &LabCatalog::default(), 1).unwrap();
        let p = m.prepare(&train_set()[0]).unwrap();
        let t = p.text.unwrap();
        let (_, (s, e)) = &t.lab_spans[1];
        assert_eq!(&t.source[*s..*e], "LDL:120");
    }

    #[test]
    fn checkpoint_round_trip_and_vocab_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = FusionModel::for_training(tiny(Mode::Fusion), &train_set(), &LabCatalog::default(), 9).unwrap();
        m.save(&path).unwrap();
        let back = FusionModel::load(&path).unwrap();
        let r = &train_set()[0];
        assert_eq!(m.forward(r).unwrap(), back.forward(r).unwrap());
        assert_eq!(back.stats.as_ref().unwrap().items.len(), CATALOG_ITEMS.len());

        let vp = vocab_path(&path);
        let text = fs::read_to_string(&vp).unwrap().replace("polyuria", "polydipsia");
        fs::write(&vp, text).unwrap();
        assert!(matches!(FusionModel::load(&path), Err(Error::Data(_))));
    }

    #[test]
    fn fusion_attention_exposed_only_in_fusion_mode() {
        let catalog = LabCatalog::default();
        let m = FusionModel::for_training(tiny(Mode::Fusion), &train_set(), &catalog, 2).unwrap();
        let x = m.prepare(&train_set()[0]).unwrap();
        let w = m.fusion_attention(&x).unwrap().unwrap();
        assert_eq!(w.len(), 2);
        let m = FusionModel::for_training(tiny(Mode::LabsOnly), &train_set(), &catalog, 2).unwrap();
        assert!(m.fusion_attention(&m.prepare(&train_set()[0]).unwrap()).unwrap().is_none());
    }

    #[test]
    fn mode_names_parse() {
        for m in Mode::ALL {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("both".parse::<Mode>().is_err());
    }
}
