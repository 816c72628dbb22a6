//! Numeric lab panel → embedding through a ReLU feed-forward network.
//!
//! Input is `[values ‖ mask]` over the catalog, with values z-scored using
//! training statistics and zero-filled where missing.

use serde::{Deserialize, Serialize};

use crate::cohort::{LabCatalog, LabPanel};
use crate::error::{Error, Result};
use crate::nn::{Builder, Linear};
use crate::numeric::{ParamStore, Tape, Tensor, Var};

/// Per-item mean and standard deviation from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub items: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Number of numeric observations behind each item's statistics.
    pub counts: Vec<usize>,
    /// Free-text note of the data the statistics came from.
    pub source: String,
}

impl NormStats {
    /// Sample statistics over numeric values of catalog items. Items with
    /// fewer than two observations, or zero spread, get σ = 1.
    pub fn fit<'a>(panels: impl IntoIterator<Item = &'a LabPanel>, catalog: &LabCatalog, source: &str) -> Self {
        let n = catalog.len();
        let mut count = vec![0usize; n];
        let mut sum = vec![0.0; n];
        let mut values: Vec<Vec<f64>> = vec![Vec::new(); n];
        for panel in panels {
            for (name, v) in panel.iter() {
                if let (Some(i), Some(x)) = (catalog.position(name), v.value()) {
                    count[i] += 1;
                    sum[i] += x;
                    values[i].push(x);
                }
            }
        }
        let mut mean = vec![0.0; n];
        let mut std = vec![1.0; n];
        for i in 0..n {
            if count[i] > 0 {
                mean[i] = sum[i] / count[i] as f64;
            }
            if count[i] >= 2 {
                let ss: f64 = values[i].iter().map(|x| (x - mean[i]).powi(2)).sum();
                let s = (ss / (count[i] - 1) as f64).sqrt();
                if s > 0.0 && s.is_finite() {
                    std[i] = s;
                }
            }
        }
        Self {
            items: catalog.items().to_vec(),
            mean,
            std,
            counts: count,
            source: source.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.items.len();
        if self.mean.len() != n || self.std.len() != n || self.counts.len() != n {
            return Err(Error::Data("normalization statistics have inconsistent lengths".into()));
        }
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Data("normalization statistics must be finite with σ > 0".into()));
        }
        Ok(())
    }
}

/// Catalog-aligned values with a presence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LabVector {
    pub values: Vec<f64>,
    pub mask: Vec<f64>,
}

impl LabVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `[values ‖ mask]` as a `1 × 2n` row.
    pub fn input_row(&self) -> Tensor {
        let mut row = self.values.clone();
        row.extend_from_slice(&self.mask);
        Tensor::row(row)
    }

    /// Marks item `i` missing.
    pub fn drop_item(&mut self, i: usize) {
        self.values[i] = 0.0;
        self.mask[i] = 0.0;
    }
}

/// Z-scores present numeric items; everything else is value 0, mask 0.
/// Non-numeric raw values and items outside the catalog count as missing.
pub fn vectorize_panel(panel: &LabPanel, stats: &NormStats) -> LabVector {
    let n = stats.items.len();
    let mut values = vec![0.0; n];
    let mut mask = vec![0.0; n];
    for (i, name) in stats.items.iter().enumerate() {
        if let Some(x) = panel.get(name).and_then(|v| v.value()) {
            values[i] = (x - stats.mean[i]) / stats.std[i];
            mask[i] = 1.0;
        }
    }
    LabVector { values, mask }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabEncoderConfig {
    pub hidden: Vec<usize>,
}

impl Default for LabEncoderConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 128] }
    }
}

#[derive(Debug, Clone)]
pub struct LabEncoderParams {
    pub n_items: usize,
    pub d_model: usize,
    pub hidden: Vec<Linear>,
    pub out: Linear,
}

impl LabEncoderParams {
    pub fn build(
        b: &mut Builder<'_>,
        prefix: &str,
        n_items: usize,
        d_model: usize,
        config: &LabEncoderConfig,
    ) -> Result<Self> {
        if n_items == 0 || d_model == 0 || config.hidden.contains(&0) {
            return Err(Error::Config("lab encoder sizes must be positive".into()));
        }
        let mut fan_in = 2 * n_items;
        let mut hidden = Vec::with_capacity(config.hidden.len());
        for (i, &h) in config.hidden.iter().enumerate() {
            hidden.push(Linear::build_relu(b, &format!("{prefix}.hidden{i}"), fan_in, h)?);
            fan_in = h;
        }
        let out = Linear::build(b, &format!("{prefix}.out"), fan_in, d_model)?;
        Ok(Self {
            n_items,
            d_model,
            hidden,
            out,
        })
    }

    /// `1 × d_model` lab embedding on `tape`.
    pub fn forward<'p>(&self, tape: &Tape<'p>, store: &'p ParamStore, v: &LabVector) -> Result<Var> {
        if v.values.len() != self.n_items || v.mask.len() != self.n_items {
            return Err(Error::shape("encode_labs", &[v.values.len(), v.mask.len()], &[self.n_items]));
        }
        if v.values.iter().chain(&v.mask).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite lab input".into()));
        }
        let mut x = tape.constant(v.input_row());
        for layer in &self.hidden {
            x = tape.relu(layer.forward(tape, store, x)?);
        }
        self.out.forward(tape, store, x)
    }

    pub fn encode_labs(&self, store: &ParamStore, v: &LabVector) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let out = self.forward(&tape, store, v)?;
        let data = tape.value(out).data().to_vec();
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats_for(items: &[&str], mean: &[f64], std: &[f64]) -> NormStats {
        NormStats {
            items: items.iter().map(|s| s.to_string()).collect(),
            mean: mean.to_vec(),
            std: std.to_vec(),
            counts: vec![10; items.len()],
            source: "test".into(),
        }
    }

    #[test]
    fn z_scores_and_missing() {
        let stats = stats_for(&["Glucose AC", "HbA1c"], &[100.0, 5.5], &[24.0, 1.0]);
        let v = vectorize_panel(&LabPanel::from_pairs([("Glucose AC", "148")]).unwrap(), &stats);
        assert_eq!(v.values, vec![2.0, 0.0]);
        assert_eq!(v.mask, vec![1.0, 0.0]);
        let v = vectorize_panel(&LabPanel::from_pairs([("HbA1c", "5.5")]).unwrap(), &stats);
        assert_eq!((v.values[1], v.mask[1]), (0.0, 1.0));
        let empty = vectorize_panel(&LabPanel::new(), &stats);
        assert!(empty.values.iter().chain(&empty.mask).all(|&x| x == 0.0));
        let odd = vectorize_panel(&LabPanel::from_pairs([("HbA1c", ">14"), ("Extra", "3")]).unwrap(), &stats);
        assert_eq!(odd.mask, vec![0.0, 0.0]);
    }

    #[test]
    fn fit_uses_sample_std_and_unit_fallback() {
        let catalog = LabCatalog::new(vec!["A".into(), "B".into(), "C".into()]).unwrap();
        let panels = [
            LabPanel::from_pairs([("A", "1"), ("B", "5"), ("C", "2")]).unwrap(),
            LabPanel::from_pairs([("A", "3"), ("C", "2")]).unwrap(),
        ];
        let s = NormStats::fit(&panels, &catalog, "train");
        assert_eq!(s.mean, vec![2.0, 5.0, 2.0]);
        assert!((s.std[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.std[1], 1.0);
        assert_eq!(s.std[2], 1.0);
        assert_eq!(s.counts, vec![2, 1, 2]);
        s.validate().unwrap();
    }

    #[test]
    fn encoder_shape_determinism_and_mask_sensitivity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = LabEncoderConfig { hidden: vec![16, 8] };
        let p = LabEncoderParams::build(&mut Builder::Init { store: &mut store, rng: &mut rng }, "lab", 4, 6, &cfg).unwrap();
        let zero = LabVector {
            values: vec![0.0; 4],
            mask: vec![0.0; 4],
        };
        let a = p.encode_labs(&store, &zero).unwrap();
        assert_eq!(a.len(), 6);
        assert_eq!(a, p.encode_labs(&store, &zero).unwrap());
        let mut flipped = zero.clone();
        flipped.mask[2] = 1.0;
        assert_ne!(a, p.encode_labs(&store, &flipped).unwrap());
        let bad = LabVector {
            values: vec![f64::NAN, 0.0, 0.0, 0.0],
            mask: vec![1.0; 4],
        };
        assert!(matches!(p.encode_labs(&store, &bad), Err(Error::Numeric(_))));
        let short = LabVector {
            values: vec![0.0; 3],
            mask: vec![0.0; 3],
        };
        assert!(matches!(p.encode_labs(&store, &short), Err(Error::Shape { .. })));
    }
}
