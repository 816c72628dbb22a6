//! Pre-norm transformer encoder with learned positions and masked self-attention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Builder, Init, LayerNorm, Linear};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var, MASK_NEG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Average of final hidden states over non-PAD positions.
    #[default]
    Mean,
    /// Final hidden state at position 0.
    First,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ffn_mult: usize,
    pub max_len: usize,
    #[serde(default)]
    pub pooling: Pooling,
    pub ln_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            ffn_mult: 4,
            max_len: 256,
            pooling: Pooling::Mean,
            ln_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.max_len == 0 || self.ffn_mult == 0 {
            return Err(Error::Config("encoder sizes must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ln_eps.is_nan() || self.ln_eps <= 0.0 {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

struct Trace {
    hidden: Var,
    n: usize,
    attn: Vec<Vec<Var>>,
    tokens: Var,
}

/// Handles to the encoder's tensors inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub vocab_size: usize,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
    pub ln_f: LayerNorm,
}

impl EncoderParams {
    pub fn build(b: &mut Builder<'_>, prefix: &str, vocab_size: usize, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        if vocab_size < 2 {
            return Err(Error::Config("vocabulary must hold at least the reserved tokens".into()));
        }
        let d = config.d_model;
        let eps = config.ln_eps;
        let tok_emb = b.param(&format!("{prefix}.tok_emb"), &[vocab_size, d], Init::Normal(0.1))?;
        let pos_emb = b.param(&format!("{prefix}.pos_emb"), &[config.max_len, d], Init::Normal(0.02))?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("{prefix}.layer{l}");
            layers.push(EncoderLayer {
                ln1: LayerNorm::build(b, &format!("{p}.ln1"), d, eps)?,
                q: Linear::build(b, &format!("{p}.attn.q"), d, d)?,
                k: Linear::build(b, &format!("{p}.attn.k"), d, d)?,
                v: Linear::build(b, &format!("{p}.attn.v"), d, d)?,
                o: Linear::build(b, &format!("{p}.attn.o"), d, d)?,
                ln2: LayerNorm::build(b, &format!("{p}.ln2"), d, eps)?,
                ff1: Linear::build(b, &format!("{p}.ffn.1"), d, d * config.ffn_mult)?,
                ff2: Linear::build(b, &format!("{p}.ffn.2"), d * config.ffn_mult, d)?,
            });
        }
        let ln_f = LayerNorm::build(b, &format!("{prefix}.ln_f"), d, eps)?;
        Ok(Self {
            config: config.clone(),
            vocab_size,
            tok_emb,
            pos_emb,
            layers,
            ln_f,
        })
    }

    /// Checks ids/mask against the configuration and returns the length with
    /// trailing padding removed.
    fn effective_len(&self, ids: &[usize], mask: &[bool]) -> Result<usize> {
        if ids.len() != mask.len() {
            return Err(Error::shape("encode_text", &[ids.len()], &[mask.len()]));
        }
        if ids.len() > self.config.max_len {
            return Err(Error::Contract(format!(
                "sequence length {} exceeds max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.vocab_size) {
            return Err(Error::Index(format!("token id {bad} outside vocabulary of {}", self.vocab_size)));
        }
        let n = mask.iter().rposition(|&m| m).map(|p| p + 1).unwrap_or(0);
        if n == 0 {
            return Err(Error::Data("input has no non-padding tokens".into()));
        }
        Ok(n)
    }

    /// Final hidden states (`n × d`, trailing padding dropped) and the
    /// per-layer, per-head attention matrices when `keep_attn` is set.
    fn run<'p>(
        &self,
        tape: &Tape<'p>,
        store: &'p ParamStore,
        ids: &[usize],
        mask: &[bool],
        keep_attn: bool,
    ) -> Result<Trace> {
        let n = self.effective_len(ids, mask)?;
        let ids = &ids[..n];
        let mask = &mask[..n];
        let cfg = &self.config;
        let dk = cfg.head_dim();
        let inv_sqrt = 1.0 / (dk as f64).sqrt();

        let tok = tape.gather_rows(tape.param(store, self.tok_emb), ids)?;
        let positions: Vec<usize> = (0..n).collect();
        let pos = tape.gather_rows(tape.param(store, self.pos_emb), &positions)?;
        let mut x = tape.add(tok, pos)?;

        let bias = mask
            .iter()
            .any(|&m| !m)
            .then(|| tape.constant(Tensor::row(mask.iter().map(|&m| if m { 0.0 } else { MASK_NEG }).collect())));

        let mut attn_maps = Vec::new();
        for layer in &self.layers {
            let h = layer.ln1.forward(tape, store, x)?;
            let q = layer.q.forward(tape, store, h)?;
            let k = layer.k.forward(tape, store, h)?;
            let v = layer.v.forward(tape, store, h)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            let mut maps = Vec::new();
            for hd in 0..cfg.n_heads {
                let qh = tape.slice_cols(q, hd * dk, dk)?;
                let kh = tape.slice_cols(k, hd * dk, dk)?;
                let vh = tape.slice_cols(v, hd * dk, dk)?;
                let mut s = tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, inv_sqrt);
                if let Some(b) = bias {
                    s = tape.add_row_bias(s, b)?;
                }
                let a = tape.softmax(s, 1)?;
                if keep_attn {
                    maps.push(a);
                }
                heads.push(tape.matmul(a, vh)?);
            }
            attn_maps.push(maps);
            let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
            let attn = layer.o.forward(tape, store, cat)?;
            x = tape.add(x, attn)?;
            let h2 = layer.ln2.forward(tape, store, x)?;
            let f = layer.ff1.forward(tape, store, h2)?;
            let f = layer.ff2.forward(tape, store, tape.gelu(f))?;
            x = tape.add(x, f)?;
        }
        let hidden = self.ln_f.forward(tape, store, x)?;
        Ok(Trace {
            hidden,
            n,
            attn: attn_maps,
            tokens: tok,
        })
    }

    /// Pooled `1 × d_model` text embedding on `tape`.
    pub fn forward<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, ids: &[usize], mask: &[bool]) -> Result<Var> {
        Ok(self.forward_with_tokens(tape, store, ids, mask)?.0)
    }

    /// Like [`forward`](Self::forward), also returning the `n × d` token
    /// embedding rows (trailing padding dropped) for input-gradient scores.
    pub fn forward_with_tokens<'p>(
        &self,
        tape: &Tape<'p>,
        store: &'p ParamStore,
        ids: &[usize],
        mask: &[bool],
    ) -> Result<(Var, Var)> {
        let Trace { hidden, n, tokens, .. } = self.run(tape, store, ids, mask, false)?;
        let weights = match self.config.pooling {
            Pooling::Mean => {
                let count = mask[..n].iter().filter(|&&m| m).count() as f64;
                mask[..n].iter().map(|&m| if m { 1.0 / count } else { 0.0 }).collect()
            }
            Pooling::First => (0..n).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect(),
        };
        Ok((tape.matmul(tape.constant(Tensor::row(weights)), hidden)?, tokens))
    }

    /// Embedding vector without recording gradients for later use.
    pub fn encode_text(&self, store: &ParamStore, ids: &[usize], mask: &[bool]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let v = self.forward(&tape, store, ids, mask)?;
        let out = tape.value(v).data().to_vec();
        Ok(out)
    }

    /// Attention matrices `[layer][head]`, each `L × L` over the full input
    /// length; columns at PAD positions are exactly zero.
    pub fn attention_weights(&self, store: &ParamStore, ids: &[usize], mask: &[bool]) -> Result<Vec<Vec<Tensor>>> {
        let tape = Tape::new();
        let Trace { n, attn: maps, .. } = self.run(&tape, store, ids, mask, true)?;
        let full = ids.len();
        maps.into_iter()
            .map(|layer| {
                layer
                    .into_iter()
                    .map(|a| {
                        let a = tape.value(a);
                        let mut data = vec![0.0; full * full];
                        for i in 0..n {
                            data[i * full..i * full + n].copy_from_slice(&a.data()[i * n..(i + 1) * n]);
                        }
                        // Rows for trailing PAD queries: they never attend, report uniform over real tokens.
                        let real: Vec<usize> = (0..n).filter(|&j| mask[j]).collect();
                        for i in n..full {
                            for &j in &real {
                                data[i * full + j] = 1.0 / real.len() as f64;
                            }
                        }
                        Tensor::new(vec![full, full], data)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Any text → fixed-size vector map, so an external encoder can stand in for
/// the built-in one.
pub trait TextEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// The built-in encoder with frozen parameters.
pub struct FrozenEncoder<'a> {
    pub params: &'a EncoderParams,
    pub store: &'a ParamStore,
    pub vocab: &'a super::Vocab,
}

impl TextEmbedder for FrozenEncoder<'_> {
    fn dim(&self) -> usize {
        self.params.config.d_model
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let enc = super::tokenize(text, self.vocab, self.params.config.max_len);
        self.params.encode_text(self.store, &enc.ids, &enc.mask)
    }
}
