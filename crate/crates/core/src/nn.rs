//! Parameter construction shared by the model components.
//!
//! A component describes its parameters once through a [`Builder`]; the
//! same code path either initializes fresh tensors or binds to tensors
//! already present in a store (checkpoint load), verifying shapes.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

pub enum Builder<'a> {
    Init {
        store: &'a mut ParamStore,
        rng: &'a mut ChaCha8Rng,
    },
    Bind {
        store: &'a ParamStore,
    },
}

impl Builder<'_> {
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        match self {
            Builder::Init { store, rng } => {
                let n: usize = shape.iter().product();
                let data = match init {
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                        (0..n).map(|_| dist.sample(*rng)).collect()
                    }
                };
                store.add(name, Tensor::new(shape.to_vec(), data)?)
            }
            Builder::Bind { store } => {
                let id = store
                    .id(name)
                    .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter {name}")))?;
                if store.get(id).shape() != shape {
                    return Err(Error::Data(format!(
                        "parameter {name} has shape {:?}, expected {shape:?}",
                        store.get(id).shape()
                    )));
                }
                Ok(id)
            }
        }
    }
}

/// Dense layer `x · W + b` with `W: fan_in × fan_out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn build(b: &mut Builder<'_>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: b.param(&format!("{name}.w"), &[fan_in, fan_out], Init::Normal(1.0 / (fan_in as f64).sqrt()))?,
            b: b.param(&format!("{name}.b"), &[fan_out], Init::Zeros)?,
        })
    }

    /// He-scaled variant for layers followed by ReLU.
    pub fn build_relu(b: &mut Builder<'_>, name: &str, fan_in: usize, fan_out: usize) -> Result<Self> {
        Ok(Self {
            w: b.param(&format!("{name}.w"), &[fan_in, fan_out], Init::Normal((2.0 / fan_in as f64).sqrt()))?,
            b: b.param(&format!("{name}.b"), &[fan_out], Init::Zeros)?,
        })
    }

    pub fn forward<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        tape.linear(x, w, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn build(b: &mut Builder<'_>, name: &str, dim: usize, eps: f64) -> Result<Self> {
        Ok(Self {
            gamma: b.param(&format!("{name}.gamma"), &[dim], Init::Ones)?,
            beta: b.param(&format!("{name}.beta"), &[dim], Init::Zeros)?,
            eps,
        })
    }

    pub fn forward<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b, self.eps)
    }
}
