//! Mode-specific normalization of continuous columns: a 1-D Gaussian mixture
//! fit by EM, values encoded as `((x - mean_k) / (4 std_k), k)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::SimRng;

pub const STD_FLOOR: f64 = 1e-6;
const MAX_ITER: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeNormalizer {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Result of one EM run, with the log-likelihood before every M-step.
#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ModeNormalizer,
    pub log_likelihood: Vec<f64>,
}

fn log_normal(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn distinct_count(values: &[f64]) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

impl ModeNormalizer {
    pub fn modes(&self) -> usize {
        self.weights.len()
    }

    fn log_joint(&self, x: f64) -> Vec<f64> {
        (0..self.modes())
            .map(|k| self.weights[k].ln() + log_normal(x, self.means[k], self.stds[k]))
            .collect()
    }

    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let lj = self.log_joint(x);
        let z = log_sum_exp(&lj);
        lj.iter().map(|l| (l - z).exp()).collect()
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&x| log_sum_exp(&self.log_joint(x))).sum()
    }

    pub fn scalar(&self, x: f64, mode: usize) -> f64 {
        (x - self.means[mode]) / (4.0 * self.stds[mode])
    }

    /// Encode with the mode drawn in proportion to its responsibility.
    pub fn encode(&self, x: f64, rng: &mut SimRng) -> (f64, usize) {
        let r = self.responsibilities(x);
        let mut u: f64 = rng.random();
        let mut mode = r.len() - 1;
        for (k, p) in r.iter().enumerate() {
            if u < *p {
                mode = k;
                break;
            }
            u -= p;
        }
        (self.scalar(x, mode), mode)
    }

    /// Encode with the most responsible mode.
    pub fn encode_argmax(&self, x: f64) -> (f64, usize) {
        let lj = self.log_joint(x);
        let mode = lj
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(k, _)| k);
        (self.scalar(x, mode), mode)
    }

    pub fn decode(&self, scalar: f64, mode: usize) -> f64 {
        scalar * 4.0 * self.stds[mode] + self.means[mode]
    }

    pub fn bic(&self, values: &[f64]) -> f64 {
        let p = (3 * self.modes() - 1) as f64;
        -2.0 * self.log_likelihood(values) + p * (values.len() as f64).ln()
    }
}

/// Run EM for exactly `k` modes. A constant column collapses to one mode
/// with the floored std.
pub fn fit_em(values: &[f64], k: usize) -> Result<EmFit> {
    if k == 0 {
        return Err(invalid("mode count must be at least 1"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid("column holds non-finite values"));
    }
    let distinct = distinct_count(values);
    if distinct == 0 {
        return Err(invalid("cannot fit a normalizer to an empty column"));
    }
    if distinct == 1 {
        return Ok(EmFit {
            model: ModeNormalizer {
                weights: vec![1.0],
                means: vec![values[0]],
                stds: vec![STD_FLOOR],
            },
            log_likelihood: Vec::new(),
        });
    }
    if distinct < k {
        return Err(invalid(format!("{k} modes need at least {k} distinct values, got {distinct}")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(STD_FLOOR);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut m = ModeNormalizer {
        weights: vec![1.0 / k as f64; k],
        means: (0..k)
            .map(|i| sorted[((i as f64 + 0.5) / k as f64 * n) as usize])
            .collect(),
        stds: vec![std / k as f64; k],
    };
    let mut trace = Vec::new();
    let mut resp = vec![vec![0.0; k]; values.len()];
    for _ in 0..MAX_ITER {
        let mut ll = 0.0;
        for (x, r) in values.iter().zip(resp.iter_mut()) {
            let lj = m.log_joint(*x);
            let z = log_sum_exp(&lj);
            ll += z;
            for (ri, l) in r.iter_mut().zip(&lj) {
                *ri = (l - z).exp();
            }
        }
        let converged = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= 1e-10 * ll.abs().max(1.0));
        trace.push(ll);
        if converged {
            break;
        }
        for j in 0..k {
            let nk: f64 = resp.iter().map(|r| r[j]).sum();
            m.weights[j] = nk / n;
            if nk <= f64::MIN_POSITIVE {
                continue;
            }
            let mu = resp.iter().zip(values).map(|(r, x)| r[j] * x).sum::<f64>() / nk;
            let var = resp
                .iter()
                .zip(values)
                .map(|(r, x)| r[j] * (x - mu).powi(2))
                .sum::<f64>()
                / nk;
            m.means[j] = mu;
            m.stds[j] = var.sqrt().max(STD_FLOOR);
        }
        let total: f64 = m.weights.iter().sum();
        m.weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(EmFit {
        model: m,
        log_likelihood: trace,
    })
}

pub fn fit_normalizer(values: &[f64], k: usize) -> Result<ModeNormalizer> {
    fit_em(values, k).map(|f| f.model)
}

/// Fit 1..=`k_max` modes and keep the lowest BIC.
pub fn fit_normalizer_bic(values: &[f64], k_max: usize) -> Result<ModeNormalizer> {
    let limit = k_max.min(distinct_count(values)).max(1);
    let mut best: Option<(f64, ModeNormalizer)> = None;
    for k in 1..=limit {
        let m = fit_normalizer(values, k)?;
        let b = m.bic(values);
        if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
            best = Some((b, m));
        }
    }
    best.map(|(_, m)| m)
        .ok_or_else(|| invalid("cannot fit a normalizer to an empty column"))
}
