//! Summary statistics and the directional tests used on experiment output.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stddev: f64,
}

pub fn summarize(xs: &[f64]) -> Result<Summary> {
    if xs.is_empty() {
        return Err(invalid("cannot summarize an empty sample"));
    }
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Summary {
        n,
        min,
        max,
        mean: mean.clamp(min, max),
        stddev: var.sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for H1: mean(a − b) > 0.
    pub p_value: f64,
}

/// Paired one-sided t-test of `a > b`. Identical samples give p = 1; a
/// constant positive difference gives p = 0.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid("paired test needs two samples of equal length ≥ 2"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let s = summarize(&d)?;
    let n = d.len();
    let (t, p_value) = if s.stddev == 0.0 {
        if s.mean > 0.0 {
            (f64::INFINITY, 0.0)
        } else {
            (if s.mean < 0.0 { f64::NEG_INFINITY } else { 0.0 }, 1.0)
        }
    } else {
        let t = s.mean / (s.stddev / (n as f64).sqrt());
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| invalid(e.to_string()))?;
        (t, 1.0 - dist.cdf(t))
    };
    Ok(PairedTest {
        n,
        mean_diff: s.mean,
        t,
        p_value,
    })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("spearman needs two samples of equal length ≥ 2"));
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Ok(0.0);
    }
    Ok(cov / (vx * vy).sqrt())
}
