//! Per-record explanations over tokens or lab items.
//!
//! A coalition keeps its features and ablates the rest: tokens become
//! `[UNK]` with the attention mask untouched, numeric lab items become
//! missing (value 0, mask 0), and textualized lab items have their tokens
//! replaced by `[UNK]`.

use serde::{Deserialize, Serialize};

use super::shapley::{shapley_exact, shapley_sampled, DEFAULT_EXACT_LIMIT};
use crate::cohort::EncounterRecord;
use crate::error::{Error, Result};
use crate::fusion::{softmax_row, FusionModel, Mode, Prepared};
use crate::numeric::{Tape, Tensor};
use crate::text::UNK_ID;
use crate::textualize::serialize_with_spans;
use crate::train::argmax;

pub const DEFAULT_PRESCREEN_K: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Token,
    LabItem,
}

/// Estimator actually used for a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Exact,
    Sampled { n_samples: usize, seed: u64 },
}

/// Requested estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MethodChoice {
    /// Exact when the feature count is within the limit, sampled otherwise.
    Auto { n_samples: usize, seed: u64 },
    Exact,
    Sampled { n_samples: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub granularity: Granularity,
    pub method: MethodChoice,
    pub exact_limit: usize,
    pub prescreen_k: usize,
    /// Class whose probability is explained; `None` means class 1 for
    /// binary models and the predicted class otherwise.
    pub target_class: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::LabItem,
            method: MethodChoice::Auto { n_samples: 256, seed: 0 },
            exact_limit: DEFAULT_EXACT_LIMIT,
            prescreen_k: DEFAULT_PRESCREEN_K,
            target_class: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub name: String,
    /// Byte range in the report text.
    pub span: Option<(usize, usize)>,
    pub value: f64,
    pub std_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prescreen {
    pub k: usize,
    pub candidates: usize,
    /// Token positions kept, in input order.
    pub kept: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub record_id: String,
    pub mode: Mode,
    pub granularity: Granularity,
    pub target_class: usize,
    pub method: Method,
    /// Value with every feature ablated.
    pub base_value: f64,
    /// Value with nothing ablated.
    pub full_value: f64,
    /// Sorted by descending `|value|`.
    pub features: Vec<FeatureAttribution>,
    pub prescreen: Option<Prescreen>,
    /// Text the spans refer to.
    pub text: String,
}

impl AttributionReport {
    /// `Σφ − (v(N) − v(∅))`.
    pub fn efficiency_gap(&self) -> f64 {
        self.features.iter().map(|f| f.value).sum::<f64>() - (self.full_value - self.base_value)
    }

    pub fn max_abs(&self) -> f64 {
        self.features.iter().map(|f| f.value.abs()).fold(0.0, f64::max)
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureAttribution> {
        self.features.iter().find(|f| f.name == name)
    }
}

struct Feature {
    name: String,
    span: Option<(usize, usize)>,
    /// Token positions or lab-vector indices it controls.
    slots: Vec<usize>,
}

fn prob_of(logits: &[f64], class: usize) -> f64 {
    softmax_row(logits)[class]
}

/// Probability of `class` with ids replaced per coalition.
fn token_value(model: &FusionModel, x: &Prepared, features: &[Feature], members: &[bool], class: usize) -> Result<f64> {
    let mut x = x.clone();
    let text = x.text.as_mut().expect("text input");
    for (f, &keep) in features.iter().zip(members) {
        if !keep {
            for &p in &f.slots {
                text.encoded.ids[p] = UNK_ID;
            }
        }
    }
    Ok(model.predict_prepared(&x)?[class])
}

/// |∂p/∂e · e| summed over the embedding width, per real token.
fn token_saliency(model: &FusionModel, x: &Prepared, class: usize) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let (logits, tokens) = model.logits_traced(&tape, x)?;
    let tokens = tokens.ok_or_else(|| Error::Contract("model has no text encoder".into()))?;
    let probs = tape.softmax(logits, 1)?;
    let mut onehot = vec![0.0; model.n_classes()];
    onehot[class] = 1.0;
    let picked = tape.sum(tape.mul(probs, tape.constant(Tensor::row(onehot)))?);
    let grads = tape.backward(picked)?;
    let g = grads.wrt(tokens).map(<[f64]>::to_vec).unwrap_or_default();
    let e = tape.value(tokens);
    let (n, d) = e.dims2()?;
    Ok((0..n)
        .map(|i| {
            if g.is_empty() {
                return 0.0;
            }
            (0..d).map(|j| g[i * d + j] * e.data()[i * d + j]).sum::<f64>().abs()
        })
        .collect())
}

/// Shapley attribution of one record's class probability.
pub fn explain_record(model: &FusionModel, record: &EncounterRecord, cfg: &ExplainConfig) -> Result<AttributionReport> {
    let x = model.prepare(record)?;
    let full_probs = model.predict_prepared(&x)?;
    let class = match cfg.target_class {
        Some(c) if c >= model.n_classes() => {
            return Err(Error::Index(format!("target class {c} out of range")));
        }
        Some(c) => c,
        None if model.n_classes() == 2 => 1,
        None => argmax(&full_probs),
    };

    let mut prescreen = None;
    let (text, features): (String, Vec<Feature>) = match cfg.granularity {
        Granularity::Token => {
            let t = x
                .text
                .as_ref()
                .ok_or_else(|| Error::Config(format!("mode {} has no text tokens", model.config.mode.name())))?;
            let n = t.encoded.spans.len();
            let mut positions: Vec<usize> = (0..n).collect();
            if n > cfg.exact_limit && n > cfg.prescreen_k {
                let sal = token_saliency(model, &x, class)?;
                let mut ranked = positions.clone();
                ranked.sort_by(|&a, &b| sal[b].total_cmp(&sal[a]).then(a.cmp(&b)));
                ranked.truncate(cfg.prescreen_k);
                ranked.sort_unstable();
                prescreen = Some(Prescreen {
                    k: cfg.prescreen_k,
                    candidates: n,
                    kept: ranked.clone(),
                });
                positions = ranked;
            }
            let features = positions
                .into_iter()
                .map(|p| {
                    let (s, e) = t.encoded.spans[p];
                    Feature {
                        name: t.source[s..e].to_string(),
                        span: Some((s, e)),
                        slots: vec![p],
                    }
                })
                .collect();
            (t.source.clone(), features)
        }
        Granularity::LabItem => match (&x.labs, &model.stats, &x.text) {
            (Some(v), Some(stats), _) => {
                let (text, spans) = serialize_with_spans(&record.panel, &model.config.serialization);
                let features = (0..v.len())
                    .filter(|&i| v.mask[i] == 1.0)
                    .map(|i| {
                        let name = stats.items[i].clone();
                        let span = spans.iter().find(|(n, _)| *n == name).map(|(_, s)| *s);
                        Feature { name, span, slots: vec![i] }
                    })
                    .collect();
                (text, features)
            }
            (None, _, Some(t)) if !t.lab_spans.is_empty() => {
                let features = t
                    .lab_spans
                    .iter()
                    .map(|(name, (s, e))| Feature {
                        name: name.clone(),
                        span: Some((*s, *e)),
                        slots: t
                            .encoded
                            .spans
                            .iter()
                            .enumerate()
                            .filter(|(_, sp)| sp.0 >= *s && sp.1 <= *e)
                            .map(|(p, _)| p)
                            .collect(),
                    })
                    .collect();
                (t.source.clone(), features)
            }
            _ => {
                return Err(Error::Config(format!(
                    "mode {} has no lab inputs for this record",
                    model.config.mode.name()
                )))
            }
        },
    };

    // Lab items in vector form only touch the lab encoder, so the text
    // embedding is computed once.
    let cached_text = match (cfg.granularity, &model.text, &x.text) {
        (Granularity::LabItem, Some(enc), Some(t)) if x.labs.is_some() => {
            Some(enc.encode_text(&model.store, &t.encoded.ids, &t.encoded.mask)?)
        }
        _ => None,
    };
    let value_fn = |members: &[bool]| -> Result<f64> {
        match cfg.granularity {
            Granularity::Token => token_value(model, &x, &features, members, class),
            Granularity::LabItem if x.labs.is_some() => {
                let mut v = x.labs.clone().expect("lab input");
                for (f, &keep) in features.iter().zip(members) {
                    if !keep {
                        for &i in &f.slots {
                            v.drop_item(i);
                        }
                    }
                }
                let tape = Tape::new();
                let lab = model.lab.as_ref().expect("lab encoder").forward(&tape, &model.store, &v)?;
                let text = cached_text.as_ref().map(|t| tape.constant(Tensor::row(t.clone())));
                let feats = model.features_from_embeddings(&tape, text, Some(lab))?;
                let logits = model.head.classify(&tape, &model.store, feats)?;
                let p = prob_of(tape.value(logits).data(), class);
                Ok(p)
            }
            Granularity::LabItem => token_value(model, &x, &features, members, class),
        }
    };

    let n = features.len();
    let full_value = value_fn(&vec![true; n])?;
    let base_value = value_fn(&vec![false; n])?;
    let resolved = match cfg.method {
        MethodChoice::Exact => Method::Exact,
        MethodChoice::Sampled { n_samples, seed } => Method::Sampled { n_samples, seed },
        MethodChoice::Auto { .. } if n <= cfg.exact_limit => Method::Exact,
        MethodChoice::Auto { n_samples, seed } => Method::Sampled { n_samples, seed },
    };
    let (phi, se) = match resolved {
        Method::Exact => (shapley_exact(value_fn, n, cfg.exact_limit)?, None),
        Method::Sampled { n_samples, seed } => {
            let (m, s) = shapley_sampled(value_fn, n, n_samples, seed)?;
            (m, Some(s))
        }
    };
    let mut out: Vec<FeatureAttribution> = features
        .into_iter()
        .enumerate()
        .map(|(i, f)| FeatureAttribution {
            name: f.name,
            span: f.span,
            value: phi[i],
            std_error: se.as_ref().map(|s| s[i]),
        })
        .collect();
    out.sort_by(|a, b| b.value.abs().total_cmp(&a.value.abs()));
    Ok(AttributionReport {
        record_id: x.record_id.clone(),
        mode: model.config.mode,
        granularity: cfg.granularity,
        target_class: class,
        method: resolved,
        base_value,
        full_value,
        features: out,
        prescreen,
        text,
    })
}
