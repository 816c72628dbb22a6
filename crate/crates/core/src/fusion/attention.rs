//! Cross-modal attention over the two-token sequence `[text; lab]`, and the MLP head.

use crate::error::{Error, Result};
use crate::nn::{Builder, Init, Linear};
use crate::numeric::{ParamId, ParamStore, Tape, Tensor, Var};

/// Bias-free multi-head self-attention projections.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub d_model: usize,
    pub n_heads: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl FusionParams {
    pub fn build(b: &mut Builder<'_>, prefix: &str, d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "fusion d_model {d_model} is not divisible by n_heads {n_heads}"
            )));
        }
        let std = Init::Normal(1.0 / (d_model as f64).sqrt());
        let shape = [d_model, d_model];
        Ok(Self {
            d_model,
            n_heads,
            wq: b.param(&format!("{prefix}.wq"), &shape, std)?,
            wk: b.param(&format!("{prefix}.wk"), &shape, std)?,
            wv: b.param(&format!("{prefix}.wv"), &shape, std)?,
            wo: b.param(&format!("{prefix}.wo"), &shape, std)?,
        })
    }

    fn attend<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, text: Var, lab: Var) -> Result<(Var, Vec<Var>)> {
        let d = self.d_model;
        for v in [text, lab] {
            let shape = tape.shape(v);
            if shape != [1, d] {
                return Err(Error::shape("fuse", &shape, &[1, d]));
            }
        }
        let seq = tape.concat_rows(&[text, lab])?;
        let q = tape.matmul(seq, tape.param(store, self.wq))?;
        let k = tape.matmul(seq, tape.param(store, self.wk))?;
        let v = tape.matmul(seq, tape.param(store, self.wv))?;
        let dk = d / self.n_heads;
        let inv_sqrt = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut maps = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dk, dk)?;
            let kh = tape.slice_cols(k, h * dk, dk)?;
            let vh = tape.slice_cols(v, h * dk, dk)?;
            let a = tape.softmax(tape.scale(tape.matmul(qh, tape.transpose(kh)?)?, inv_sqrt), 1)?;
            maps.push(a);
            heads.push(tape.matmul(a, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let out = tape.matmul(cat, tape.param(store, self.wo))?;
        let mean = tape.constant(Tensor::row(vec![0.5, 0.5]));
        Ok((tape.matmul(mean, out)?, maps))
    }

    /// `[a ‖ text ‖ lab]` where `a` is the mean of the two attended positions.
    pub fn fuse<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, text: Var, lab: Var) -> Result<Var> {
        let (a, _) = self.attend(tape, store, text, lab)?;
        tape.concat_cols(&[a, text, lab])
    }

    /// Per-head `2 × 2` attention matrices (row 0 = text query, row 1 = lab query).
    pub fn attention_weights(&self, store: &ParamStore, text: &[f64], lab: &[f64]) -> Result<Vec<Tensor>> {
        let tape = Tape::new();
        let t = tape.constant(Tensor::row(text.to_vec()));
        let l = tape.constant(Tensor::row(lab.to_vec()));
        let (_, maps) = self.attend(&tape, store, t, l)?;
        Ok(maps.into_iter().map(|m| tape.value(m).clone()).collect())
    }
}

/// Hidden ReLU layer followed by a linear map to class logits.
#[derive(Debug, Clone)]
pub struct Head {
    pub in_width: usize,
    pub n_classes: usize,
    pub hidden: Linear,
    pub out: Linear,
}

impl Head {
    pub fn build(b: &mut Builder<'_>, prefix: &str, in_width: usize, hidden: usize, n_classes: usize) -> Result<Self> {
        if in_width == 0 || hidden == 0 || n_classes < 2 {
            return Err(Error::Config("head needs positive widths and at least two classes".into()));
        }
        Ok(Self {
            in_width,
            n_classes,
            hidden: Linear::build_relu(b, &format!("{prefix}.hidden"), in_width, hidden)?,
            out: Linear::build(b, &format!("{prefix}.out"), hidden, n_classes)?,
        })
    }

    /// `1 × C` logits.
    pub fn classify<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, features: Var) -> Result<Var> {
        let shape = tape.shape(features);
        if shape != [1, self.in_width] {
            return Err(Error::shape("classify", &shape, &[1, self.in_width]));
        }
        let h = tape.relu(self.hidden.forward(tape, store, features)?);
        self.out.forward(tape, store, h)
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(d: usize, heads: usize) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = FusionParams::build(&mut Builder::Init { store: &mut store, rng: &mut rng }, "fusion", d, heads).unwrap();
        (store, p)
    }

    #[test]
    fn identical_inputs_give_value_projection() {
        let (store, p) = setup(4, 2);
        let x = [0.3, -1.2, 0.5, 2.0];
        let tape = Tape::new();
        let t = tape.constant(Tensor::row(x.to_vec()));
        let l = tape.constant(Tensor::row(x.to_vec()));
        let fused = p.fuse(&tape, &store, t, l).unwrap();
        let out = tape.value(fused).data().to_vec();
        assert_eq!(out.len(), 12);
        // x · Wv · Wo, independent of the attention weights.
        let xv = crate::numeric::Tensor::row(x.to_vec());
        let t2 = Tape::new();
        let e = t2.matmul(t2.constant(xv), t2.param(&store, p.wv)).unwrap();
        let e = t2.matmul(e, t2.param(&store, p.wo)).unwrap();
        for (a, b) in out[..4].iter().zip(t2.value(e).data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(&out[4..8], &x);
        assert_eq!(&out[8..], &x);
    }

    #[test]
    fn weights_rows_sum_to_one_and_swap_is_covariant() {
        let (store, p) = setup(4, 2);
        let a = [1.0, 0.0, -0.5, 0.2];
        let b = [0.1, 0.9, 0.4, -1.0];
        let w = p.attention_weights(&store, &a, &b).unwrap();
        let ws = p.attention_weights(&store, &b, &a).unwrap();
        for (m, s) in w.iter().zip(&ws) {
            for i in 0..2 {
                assert!((m.get2(i, 0) + m.get2(i, 1) - 1.0).abs() < 1e-12);
                for j in 0..2 {
                    assert!((m.get2(i, j) - s.get2(1 - i, 1 - j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let (store, p) = setup(4, 2);
        let tape = Tape::new();
        let t = tape.constant(Tensor::row(vec![0.0; 4]));
        let l = tape.constant(Tensor::row(vec![0.0; 3]));
        assert!(matches!(p.fuse(&tape, &store, t, l), Err(Error::Shape { .. })));
        assert!(FusionParams::build(&mut Builder::Bind { store: &store }, "fusion", 4, 3).is_err());
    }

    #[test]
    fn zero_weight_head_returns_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = Head::build(&mut Builder::Init { store: &mut store, rng: &mut rng }, "head", 3, 2, 5).unwrap();
        for id in [head.hidden.w, head.out.w] {
            let n = store.get(id).len();
            store.set(id, &vec![0.0; n]).unwrap();
        }
        let bias = [0.1, -0.2, 0.3, 0.0, 1.5];
        store.set(head.out.b, &bias).unwrap();
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let logits = head.classify(&tape, &store, x).unwrap();
        assert_eq!(tape.value(logits).data(), &bias);
        let wrong = tape.constant(Tensor::row(vec![1.0, 2.0]));
        assert!(head.classify(&tape, &store, wrong).is_err());
    }

    #[test]
    fn softmax_row_is_distribution() {
        let p = softmax_row(&[1000.0, 1000.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }
}
