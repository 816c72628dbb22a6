//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every operation on a [`Tape`] evaluates eagerly and appends a node that
//! remembers its inputs plus whatever activations the backward rule needs.
//! Nodes are only ever appended, so the node order is already a topological
//! order and [`Tape::backward`] is a single reverse sweep.
//!
//! Parameter leaves borrow their tensor from a [`ParamStore`] instead of
//! copying it; one tape lives for one forward/backward pass.

use std::borrow::Cow;
use std::cell::{Ref, RefCell};

use super::params::{ParamId, ParamStore};
use super::tensor::{matmul_nn, matmul_nt, matmul_tn, normal_cdf, normal_pdf, Tensor};
use crate::error::{Error, Result};

/// Additive score used to mask attention logits; `exp` of it underflows to exactly 0.
pub const MASK_NEG: f64 = -1e30;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddRowBias { x: usize, bias: usize, n: usize },
    Relu { x: usize },
    Gelu { x: usize },
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, rstd: Vec<f64>, n: usize },
    Gather { table: usize, ids: Vec<usize>, d: usize },
    Transpose { x: usize, m: usize, n: usize },
    SliceCols { x: usize, start: usize, len: usize, m: usize, n: usize },
    ConcatCols { parts: Vec<(usize, usize)>, m: usize },
    ConcatRows { parts: Vec<usize> },
    Sum { x: usize },
    CrossEntropy { logits: usize, targets: Vec<usize>, row_weights: Vec<f64>, probs: Vec<f64>, c: usize },
}

struct Node<'p> {
    value: Cow<'p, Tensor>,
    op: Op,
    param: Option<ParamId>,
    requires_grad: bool,
}

/// Append-only computation record.
pub struct Tape<'p> {
    nodes: RefCell<Vec<Node<'p>>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Cow<'p, Tensor>, op: Op, param: Option<ParamId>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            param,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    fn derived(&self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let rg = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        self.push(Cow::Owned(value), op, None, rg)
    }

    /// A differentiable leaf owning its value.
    pub fn var(&self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, None, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, None, false)
    }

    /// A differentiable leaf borrowing a stored parameter.
    pub fn param(&self, store: &'p ParamStore, id: ParamId) -> Var {
        self.push(Cow::Borrowed(store.get(id)), Op::Leaf, Some(id), true)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| n[v.0].value.as_ref())
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.nodes.borrow()[v.0].value.dims2()
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (out, m, k, n) = {
            let nodes = self.nodes.borrow();
            let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
            let (m, k) = ta.dims2().map_err(|_| Error::shape("matmul", ta.shape(), tb.shape()))?;
            let (k2, n) = tb.dims2().map_err(|_| Error::shape("matmul", ta.shape(), tb.shape()))?;
            if k != k2 {
                return Err(Error::shape("matmul", ta.shape(), tb.shape()));
            }
            (matmul_nn(ta.data(), tb.data(), m, k, n), m, k, n)
        };
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.derived(value, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0]))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let nodes = self.nodes.borrow();
        let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.derived(value, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.derived(value, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&self, x: Var, c: f64) -> Var {
        let value = self.map(x, |v| v * c);
        self.derived(value, Op::Scale { x: x.0, c }, &[x.0])
    }

    fn map(&self, x: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let nodes = self.nodes.borrow();
        let t = &nodes[x.0].value;
        let data = t.data().iter().map(|&v| f(v)).collect();
        Tensor::new(t.shape().to_vec(), data).expect("same shape")
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_row_bias(&self, x: Var, bias: Var) -> Result<Var> {
        let (value, n) = {
            let nodes = self.nodes.borrow();
            let (tx, tb) = (&nodes[x.0].value, &nodes[bias.0].value);
            let (_, n) = tx.dims2()?;
            if tb.len() != n {
                return Err(Error::shape("add_row_bias", tx.shape(), tb.shape()));
            }
            let mut data = tx.data().to_vec();
            for row in data.chunks_mut(n) {
                for (v, b) in row.iter_mut().zip(tb.data()) {
                    *v += b;
                }
            }
            (Tensor::new(tx.shape().to_vec(), data)?, n)
        };
        Ok(self.derived(value, Op::AddRowBias { x: x.0, bias: bias.0, n }, &[x.0, bias.0]))
    }

    /// `x · w + b`, the affine map used by every dense layer.
    pub fn linear(&self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn relu(&self, x: Var) -> Var {
        let value = self.map(x, |v| v.max(0.0));
        self.derived(value, Op::Relu { x: x.0 }, &[x.0])
    }

    /// Exact GELU, `x·Φ(x)` with the Gaussian CDF (not the tanh approximation).
    pub fn gelu(&self, x: Var) -> Var {
        let value = self.map(x, |v| v * normal_cdf(v));
        self.derived(value, Op::Gelu { x: x.0 }, &[x.0])
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let (value, outer, len, inner) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[x.0].value;
            let shape = t.shape();
            if axis >= shape.len() {
                return Err(Error::Index(format!("softmax axis {axis} for shape {shape:?}")));
            }
            if t.data().iter().any(|v| v.is_nan()) {
                return Err(Error::Numeric("softmax input contains NaN".into()));
            }
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let src = t.data();
            let mut out = vec![0.0; src.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let max = (0..len).map(|j| src[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for j in 0..len {
                        let e = (src[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        sum += e;
                    }
                    for j in 0..len {
                        out[idx(j)] /= sum;
                    }
                }
            }
            (Tensor::new(shape.to_vec(), out)?, outer, len, inner)
        };
        Ok(self.derived(value, Op::Softmax { x: x.0, outer, len, inner }, &[x.0]))
    }

    /// Layer normalization over the last dimension with population variance.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::Config(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (value, xhat, rstd, n) = {
            let nodes = self.nodes.borrow();
            let (tx, tg, tb) = (&nodes[x.0].value, &nodes[gamma.0].value, &nodes[beta.0].value);
            let n = *tx.shape().last().expect("non-empty shape");
            if tg.len() != n || tb.len() != n {
                return Err(Error::shape("layer_norm", tx.shape(), tg.shape()));
            }
            let rows = tx.len() / n;
            let mut xhat = vec![0.0; tx.len()];
            let mut rstd = vec![0.0; rows];
            let mut out = vec![0.0; tx.len()];
            for r in 0..rows {
                let row = &tx.data()[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    out[r * n + j] = tg.data()[j] * h + tb.data()[j];
                }
            }
            (Tensor::new(tx.shape().to_vec(), out)?, xhat, rstd, n)
        };
        Ok(self.derived(
            value,
            Op::LayerNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                rstd,
                n,
            },
            &[x.0, gamma.0, beta.0],
        ))
    }

    /// Selects rows of a `V × d` table, producing `len(ids) × d`.
    pub fn gather_rows(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let (value, d) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[table.0].value;
            let (v, d) = t.dims2()?;
            if ids.is_empty() {
                return Err(Error::Contract("gather_rows needs at least one id".into()));
            }
            let mut out = Vec::with_capacity(ids.len() * d);
            for &id in ids {
                if id >= v {
                    return Err(Error::Index(format!("row {id} out of range for table with {v} rows")));
                }
                out.extend_from_slice(&t.data()[id * d..(id + 1) * d]);
            }
            (Tensor::new(vec![ids.len(), d], out)?, d)
        };
        Ok(self.derived(
            value,
            Op::Gather {
                table: table.0,
                ids: ids.to_vec(),
                d,
            },
            &[table.0],
        ))
    }

    pub fn transpose(&self, x: Var) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        let value = {
            let nodes = self.nodes.borrow();
            let src = nodes[x.0].value.data();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = src[i * n + j];
                }
            }
            Tensor::new(vec![n, m], out)?
        };
        Ok(self.derived(value, Op::Transpose { x: x.0, m, n }, &[x.0]))
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.dims2(x)?;
        if len == 0 || start + len > n {
            return Err(Error::shape("slice_cols", &[m, n], &[start, len]));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let src = nodes[x.0].value.data();
            let mut out = Vec::with_capacity(m * len);
            for i in 0..m {
                out.extend_from_slice(&src[i * n + start..i * n + start + len]);
            }
            Tensor::new(vec![m, len], out)?
        };
        Ok(self.derived(value, Op::SliceCols { x: x.0, start, len, m, n }, &[x.0]))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_cols needs at least one part".into()));
        }
        let (value, widths, m) = {
            let nodes = self.nodes.borrow();
            let (m, _) = nodes[parts[0].0].value.dims2()?;
            let mut widths = Vec::with_capacity(parts.len());
            for p in parts {
                let t = &nodes[p.0].value;
                let (pm, pn) = t.dims2()?;
                if pm != m {
                    return Err(Error::shape("concat_cols", nodes[parts[0].0].value.shape(), t.shape()));
                }
                widths.push(pn);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(m * total);
            for i in 0..m {
                for (p, &w) in parts.iter().zip(&widths) {
                    out.extend_from_slice(&nodes[p.0].value.data()[i * w..(i + 1) * w]);
                }
            }
            (Tensor::new(vec![m, total], out)?, widths, m)
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let op = Op::ConcatCols {
            parts: ids.iter().copied().zip(widths).collect(),
            m,
        };
        Ok(self.derived(value, op, &ids))
    }

    /// Stacks 2-D tensors with equal column counts vertically.
    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Contract("concat_rows needs at least one part".into()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let (_, n) = nodes[parts[0].0].value.dims2()?;
            let mut rows = 0;
            let mut out = Vec::new();
            for p in parts {
                let t = &nodes[p.0].value;
                let (pm, pn) = t.dims2()?;
                if pn != n {
                    return Err(Error::shape("concat_rows", nodes[parts[0].0].value.shape(), t.shape()));
                }
                rows += pm;
                out.extend_from_slice(t.data());
            }
            Tensor::new(vec![rows, n], out)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.derived(value, Op::ConcatRows { parts: ids.clone() }, &ids))
    }

    pub fn sum(&self, x: Var) -> Var {
        let s = self.nodes.borrow()[x.0].value.data().iter().sum();
        self.derived(Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    /// Mean over the batch of `w[target]·(−log softmax(logits)[target])`.
    ///
    /// Class weights are applied unnormalized: the sum of weighted losses is
    /// divided by the batch size, not by the sum of weights.
    pub fn cross_entropy(&self, logits: Var, targets: &[usize], class_weights: Option<&[f64]>) -> Result<Var> {
        let (loss, probs, row_weights, c) = {
            let nodes = self.nodes.borrow();
            let t = &nodes[logits.0].value;
            let (b, c) = t.dims2()?;
            if targets.len() != b {
                return Err(Error::shape("cross_entropy", t.shape(), &[targets.len()]));
            }
            if let Some(w) = class_weights {
                if w.len() != c {
                    return Err(Error::shape("cross_entropy weights", t.shape(), &[w.len()]));
                }
            }
            let mut probs = vec![0.0; b * c];
            let mut row_weights = Vec::with_capacity(b);
            let mut total = 0.0;
            for (i, &tgt) in targets.iter().enumerate() {
                if tgt >= c {
                    return Err(Error::Index(format!("target class {tgt} out of range for {c} classes")));
                }
                let row = &t.data()[i * c..(i + 1) * c];
                if row.iter().any(|v| v.is_nan()) {
                    return Err(Error::Numeric("cross_entropy logits contain NaN".into()));
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
                for j in 0..c {
                    probs[i * c + j] = (row[j] - lse).exp();
                }
                let w = class_weights.map_or(1.0, |w| w[tgt]);
                row_weights.push(w);
                total += w * (lse - row[tgt]);
            }
            (total / b as f64, probs, row_weights, c)
        };
        Ok(self.derived(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                row_weights,
                probs,
                c,
            },
            &[logits.0],
        ))
    }

    /// Reverse sweep from a scalar `loss`, returning gradients for every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if loss.0 >= nodes.len() {
            return Err(Error::Contract("loss is not on this tape".into()));
        }
        if !nodes[loss.0].value.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            let wants = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| nodes[i].value.data();
            match &node.op {
                Op::Leaf => {}
                &Op::MatMul { a, b, m, k, n } => {
                    if wants(a) {
                        let ga = matmul_nt(&g, val(b), m, n, k);
                        accumulate(&mut grads, a, &ga);
                    }
                    if wants(b) {
                        let gb = matmul_tn(val(a), &g, m, k, n);
                        accumulate(&mut grads, b, &gb);
                    }
                }
                &Op::Add { a, b } => {
                    if wants(a) {
                        accumulate(&mut grads, a, &g);
                    }
                    if wants(b) {
                        accumulate(&mut grads, b, &g);
                    }
                }
                &Op::Mul { a, b } => {
                    if wants(a) {
                        let ga: Vec<f64> = g.iter().zip(val(b)).map(|(g, y)| g * y).collect();
                        accumulate(&mut grads, a, &ga);
                    }
                    if wants(b) {
                        let gb: Vec<f64> = g.iter().zip(val(a)).map(|(g, x)| g * x).collect();
                        accumulate(&mut grads, b, &gb);
                    }
                }
                &Op::Scale { x, c } => {
                    let gx: Vec<f64> = g.iter().map(|g| g * c).collect();
                    accumulate(&mut grads, x, &gx);
                }
                &Op::AddRowBias { x, bias, n } => {
                    if wants(x) {
                        accumulate(&mut grads, x, &g);
                    }
                    if wants(bias) {
                        let mut gb = vec![0.0; n];
                        for row in g.chunks(n) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, bias, &gb);
                    }
                }
                &Op::Relu { x } => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(val(x))
                        .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, x, &gx);
                }
                &Op::Gelu { x } => {
                    let gx: Vec<f64> = g
                        .iter()
                        .zip(val(x))
                        .map(|(g, &v)| g * (normal_cdf(v) + v * normal_pdf(v)))
                        .collect();
                    accumulate(&mut grads, x, &gx);
                }
                &Op::Softmax { x, outer, len, inner } => {
                    let y = node.value.data();
                    let mut gx = vec![0.0; y.len()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| (o * len + j) * inner + i;
                            let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..len {
                                gx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                    accumulate(&mut grads, x, &gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                    n,
                } => {
                    let (x, gamma, beta, n) = (*x, *gamma, *beta, *n);
                    let gam = val(gamma);
                    let rows = xhat.len() / n;
                    if wants(x) {
                        let mut gx = vec![0.0; xhat.len()];
                        for r in 0..rows {
                            let sl = r * n..(r + 1) * n;
                            let dxh: Vec<f64> = g[sl.clone()].iter().zip(gam).map(|(g, w)| g * w).collect();
                            let sum_d: f64 = dxh.iter().sum();
                            let sum_dx: f64 = dxh.iter().zip(&xhat[sl.clone()]).map(|(d, h)| d * h).sum();
                            let nf = n as f64;
                            for j in 0..n {
                                gx[r * n + j] =
                                    rstd[r] / nf * (nf * dxh[j] - sum_d - xhat[r * n + j] * sum_dx);
                            }
                        }
                        accumulate(&mut grads, x, &gx);
                    }
                    if wants(gamma) || wants(beta) {
                        let mut gg = vec![0.0; n];
                        let mut gbeta = vec![0.0; n];
                        for r in 0..rows {
                            for j in 0..n {
                                gg[j] += g[r * n + j] * xhat[r * n + j];
                                gbeta[j] += g[r * n + j];
                            }
                        }
                        if wants(gamma) {
                            accumulate(&mut grads, gamma, &gg);
                        }
                        if wants(beta) {
                            accumulate(&mut grads, beta, &gbeta);
                        }
                    }
                }
                Op::Gather { table, ids, d } => {
                    let (table, d) = (*table, *d);
                    if wants(table) {
                        let size = nodes[table].value.len();
                        let slot = grads[table].get_or_insert_with(|| vec![0.0; size]);
                        for (r, &id) in ids.iter().enumerate() {
                            for j in 0..d {
                                slot[id * d + j] += g[r * d + j];
                            }
                        }
                    }
                }
                &Op::Transpose { x, m, n } => {
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            gx[i * n + j] = g[j * m + i];
                        }
                    }
                    accumulate(&mut grads, x, &gx);
                }
                &Op::SliceCols { x, start, len, m, n } => {
                    if wants(x) {
                        let slot = grads[x].get_or_insert_with(|| vec![0.0; m * n]);
                        for i in 0..m {
                            for j in 0..len {
                                slot[i * n + start + j] += g[i * len + j];
                            }
                        }
                    }
                }
                Op::ConcatCols { parts, m } => {
                    let total: usize = parts.iter().map(|p| p.1).sum();
                    let mut offset = 0;
                    for &(p, w) in parts {
                        if wants(p) {
                            let mut gp = Vec::with_capacity(m * w);
                            for i in 0..*m {
                                gp.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                            }
                            accumulate(&mut grads, p, &gp);
                        }
                        offset += w;
                    }
                }
                Op::ConcatRows { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p].value.len();
                        if wants(p) {
                            accumulate(&mut grads, p, &g[offset..offset + len]);
                        }
                        offset += len;
                    }
                }
                &Op::Sum { x } => {
                    let len = nodes[x].value.len();
                    accumulate(&mut grads, x, &vec![g[0]; len]);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    row_weights,
                    probs,
                    c,
                } => {
                    let b = targets.len() as f64;
                    let mut gl = probs.clone();
                    for (i, (&t, &w)) in targets.iter().zip(row_weights).enumerate() {
                        gl[i * c + t] -= 1.0;
                        for v in &mut gl[i * c..(i + 1) * c] {
                            *v *= g[0] * w / b;
                        }
                    }
                    accumulate(&mut grads, *logits, &gl);
                }
            }
            grads[id] = Some(g);
        }

        let params = nodes.iter().map(|n| n.param).collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    match &mut grads[id] {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<Option<ParamId>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Per-parameter gradients for `store`, summing over every leaf that
    /// referenced the same parameter. Parameters not touched get zeros.
    pub fn param_grads(&self, store: &ParamStore) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        for (g, p) in self.grads.iter().zip(&self.params) {
            if let (Some(g), Some(p)) = (g, p) {
                for (acc, v) in out[p.index()].iter_mut().zip(g) {
                    *acc += v;
                }
            }
        }
        out
    }
}
