//! Shapley values of a set function by full enumeration or permutation sampling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_EXACT_LIMIT: usize = 12;

/// Exact Shapley values. `value_fn` receives membership flags of length `n`.
/// Evaluates all `2^n` coalitions once.
pub fn shapley_exact<F>(value_fn: F, n: usize, limit: usize) -> Result<Vec<f64>>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    if n > limit || n >= 63 {
        return Err(Error::Config(format!(
            "{n} features exceed the exact limit of {limit}; use the sampled estimator"
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let total = 1usize << n;
    let values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mask| {
            let members: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            value_fn(&members)
        })
        .collect::<Result<_>>()?;
    // w(s) = s! (n−s−1)! / n!
    let mut weight = vec![0.0; n];
    for (s, w) in weight.iter_mut().enumerate() {
        let mut x = 1.0 / n as f64;
        // 1 / (n · C(n−1, s))
        for k in 0..s {
            x *= (k + 1) as f64 / (n - 1 - k) as f64;
        }
        *w = x;
    }
    let phi = (0..n)
        .map(|i| {
            let bit = 1usize << i;
            let mut acc = 0.0;
            for mask in 0..total {
                if mask & bit == 0 {
                    acc += weight[mask.count_ones() as usize] * (values[mask | bit] - values[mask]);
                }
            }
            acc
        })
        .collect();
    Ok(phi)
}

/// Permutation-sampling estimates with their standard errors. Sample `m`
/// draws its permutation from stream `m` of `seed`, so results do not
/// depend on scheduling.
pub fn shapley_sampled<F>(value_fn: F, n: usize, n_samples: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[bool]) -> Result<f64> + Sync,
{
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be at least 1".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    let draws: Vec<Vec<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut members = vec![false; n];
            let mut prev = value_fn(&members)?;
            let mut contrib = vec![0.0; n];
            for &i in &perm {
                members[i] = true;
                let v = value_fn(&members)?;
                contrib[i] = v - prev;
                prev = v;
            }
            Ok(contrib)
        })
        .collect::<Result<_>>()?;
    let m = n_samples as f64;
    let mut mean = vec![0.0; n];
    for d in &draws {
        for (a, x) in mean.iter_mut().zip(d) {
            *a += x;
        }
    }
    for a in &mut mean {
        *a /= m;
    }
    let se = if n_samples < 2 {
        vec![0.0; n]
    } else {
        (0..n)
            .map(|i| {
                let ss: f64 = draws.iter().map(|d| (d[i] - mean[i]).powi(2)).sum();
                (ss / (m - 1.0)).sqrt() / m.sqrt()
            })
            .collect()
    };
    Ok((mean, se))
}
