//! Central finite-difference gradient checking.
//!
//! The numeric side only evaluates forward values on fresh tapes, so it is
//! independent of every backward rule it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative error floor: gradients smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-6;

/// `‖a − n‖₂ / max(‖a‖₂ + ‖n‖₂, REL_FLOOR)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (na + nn).max(REL_FLOOR)
}

/// Central differences of a scalar function of several tensors.
pub fn numeric_gradients<F>(inputs: &[Tensor], f: F, h: f64) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.var(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::Contract("gradient check needs a scalar output".into()));
        }
        Ok(v.data()[0])
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for i in 0..inputs.len() {
        let mut g = vec![0.0; inputs[i].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            *gj = (plus - minus) / (2.0 * h);
        }
        out.push(g);
    }
    Ok(out)
}

/// Backward-pass gradients of the same function.
pub fn analytic_gradients<F>(inputs: &[Tensor], f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.var(t.clone())).collect();
    let out = f(&tape, &vars)?;
    let grads = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.wrt(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect())
}

/// Largest per-input relative error between backward and finite differences.
pub fn max_relative_error<F>(inputs: &[Tensor], f: F, h: f64) -> Result<f64>
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let analytic = analytic_gradients(inputs, &f)?;
    let numeric = numeric_gradients(inputs, &f, h)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
