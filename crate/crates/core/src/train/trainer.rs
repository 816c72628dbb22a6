//! Mini-batch Adam training with class weighting and early stopping.
//!
//! Each batch is cut into fixed-size chunks; chunks run in parallel, each
//! summing its records' gradients in order, and chunk sums are then added
//! in order. The result does not depend on the number of worker threads.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{EncounterRecord, LabCatalog};
use crate::error::{Error, Result};
use crate::fusion::{FusionModel, ModelConfig, Prepared};
use crate::numeric::{AdamConfig, AdamState, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    None,
    /// Loss weight `N / (C · n_c)` for class `c`.
    #[default]
    InverseFrequency,
    /// Resample each epoch so every class matches the largest one.
    Oversample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: Option<f64>,
    pub class_weighting: ClassWeighting,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Records per gradient chunk.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 1e-3,
            clip_norm: Some(1.0),
            class_weighting: ClassWeighting::InverseFrequency,
            seed: 0,
            patience: Some(5),
            chunk_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.chunk_size == 0 {
            return Err(Error::Config("epochs, batch_size and chunk_size must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// A prepared input with its class index.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: Prepared,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    /// Validation loss of the freshly initialized model.
    pub initial_val_loss: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (1-based; 0 = initial).
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub class_weights: Vec<f64>,
}

impl History {
    pub fn final_val_loss(&self) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch).and_then(|e| e.val_loss)
    }
}

/// Converts labeled records into examples, skipping unlabeled ones.
pub fn prepare_examples(model: &FusionModel, records: &[EncounterRecord]) -> Result<Vec<Example>> {
    let task = model.config.task;
    records
        .par_iter()
        .filter_map(|r| task.target(r).map(|t| (r, t)))
        .map(|(r, target)| {
            Ok(Example {
                input: model.prepare(r)?,
                target,
            })
        })
        .collect()
}

/// `N / (C · n_c)` per class; an empty class has no defined weight.
pub fn inverse_frequency_weights(targets: &[usize], n_classes: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_classes];
    for &t in targets {
        counts[t] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Config(format!(
            "inverse-frequency weighting is undefined: class {c} has no training examples"
        )));
    }
    let n = targets.len() as f64;
    Ok(counts.iter().map(|&c| n / (n_classes as f64 * c as f64)).collect())
}

fn loss_and_grads(model: &FusionModel, ex: &Example, weights: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let logits = model.logits(&tape, &ex.input)?;
    let loss = tape.cross_entropy(logits, &[ex.target], Some(weights))?;
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on {}", ex.input.record_id)));
    }
    let grads = tape.backward(loss)?.param_grads(&model.store);
    Ok((value, grads))
}

fn add_into(acc: &mut [Vec<f64>], g: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(g) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Weighted mean cross-entropy over `examples`.
pub fn mean_loss(model: &FusionModel, examples: &[Example], weights: &[f64]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Data("no examples to score".into()));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let tape = Tape::new();
            let logits = model.logits(&tape, &ex.input)?;
            let loss = tape.cross_entropy(logits, &[ex.target], Some(weights))?;
            let v = tape.value(loss).data()[0];
            Ok(v)
        })
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / examples.len() as f64)
}

fn epoch_order(examples: &[Example], n_classes: usize, weighting: ClassWeighting, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if weighting == ClassWeighting::Oversample {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, ex) in examples.iter().enumerate() {
            by_class[ex.target].push(i);
        }
        let largest = by_class.iter().map(Vec::len).max().unwrap_or(0);
        for members in by_class.iter().filter(|m| !m.is_empty()) {
            for _ in members.len()..largest {
                order.push(members[rng.random_range(0..members.len())]);
            }
        }
    }
    order.shuffle(rng);
    order
}

/// Trains `model` in place and keeps the parameters of the best validation epoch.
pub fn fit(model: &mut FusionModel, train: &[Example], val: &[Example], cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("no labeled training records".into()));
    }
    let n_classes = model.n_classes();
    let targets: Vec<usize> = train.iter().map(|e| e.target).collect();
    let weights = match cfg.class_weighting {
        ClassWeighting::InverseFrequency => inverse_frequency_weights(&targets, n_classes)?,
        _ => vec![1.0; n_classes],
    };
    let mut adam = AdamState::new(&model.store, cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let initial_val_loss = if val.is_empty() {
        None
    } else {
        Some(mean_loss(model, val, &weights)?)
    };
    let mut best: (f64, usize, Vec<Tensor>) = (
        initial_val_loss.unwrap_or(f64::INFINITY),
        0,
        model.store.tensors().to_vec(),
    );
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(train, n_classes, cfg.class_weighting, &mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let chunks: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_chunks(cfg.chunk_size)
                .map(|chunk| {
                    let mut acc: Option<(f64, Vec<Vec<f64>>)> = None;
                    for &i in chunk {
                        let (l, g) = loss_and_grads(model, &train[i], &weights)?;
                        match &mut acc {
                            Some((ls, gs)) => {
                                *ls += l;
                                add_into(gs, &g);
                            }
                            None => acc = Some((l, g)),
                        }
                    }
                    Ok(acc.expect("chunks are non-empty"))
                })
                .collect::<Result<_>>()?;
            let mut chunks = chunks.into_iter();
            let (mut l, mut grads) = chunks.next().expect("batch is non-empty");
            for (cl, cg) in chunks {
                l += cl;
                add_into(&mut grads, &cg);
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
            loss_sum += l;
            adam.step(&mut model.store, &grads)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(mean_loss(model, val, &weights)?)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match val_loss {
            Some(v) if v < best.0 => {
                best = (v, epoch, model.store.tensors().to_vec());
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if cfg.patience.is_some_and(|p| stale >= p) {
                    stopped_early = true;
                    break;
                }
            }
            None => best = (f64::INFINITY, epoch, Vec::new()),
        }
    }
    if !best.2.is_empty() {
        model.store.tensors_mut().clone_from_slice(&best.2);
    }
    Ok(History {
        initial_val_loss,
        epochs,
        best_epoch: best.1,
        stopped_early,
        class_weights: weights,
    })
}

/// Fits vocabulary and normalization on `train`, initializes a model from
/// `cfg.seed` and trains it.
pub fn train(
    model_config: ModelConfig,
    train: &[EncounterRecord],
    val: &[EncounterRecord],
    catalog: &LabCatalog,
    cfg: &TrainConfig,
) -> Result<(FusionModel, History)> {
    cfg.validate()?;
    let task = model_config.task;
    let labeled: Vec<EncounterRecord> = train.iter().filter(|r| task.target(r).is_some()).cloned().collect();
    if labeled.is_empty() {
        return Err(Error::Data("no labeled training records".into()));
    }
    let mut model = FusionModel::for_training(model_config, &labeled, catalog, cfg.seed)?;
    let train_ex = prepare_examples(&model, &labeled)?;
    let val_ex = prepare_examples(&model, val)?;
    let history = fit(&mut model, &train_ex, &val_ex, cfg)?;
    Ok((model, history))
}
