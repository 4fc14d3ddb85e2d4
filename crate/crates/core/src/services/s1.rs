//! Service-1: a small classifier from network features to a CST value.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{FeatureVector, FEATURE_DIM};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::tabgan::nn::{Activation, Adam, Grads, Mlp};

pub const CST_GRID: [f64; 5] = [-82.0, -77.0, -72.0, -67.0, -62.0];
pub const MIN_EXAMPLES: usize = 50;
pub const MIN_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S1Hyper {
    pub hidden_dims: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for S1Hyper {
    fn default() -> Self {
        Self {
            hidden_dims: vec![16],
            epochs: 300,
            batch: 32,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub features: FeatureVector,
    pub cst_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CstModel {
    pub grid: Vec<f64>,
    pub net: Mlp,
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
    pub seed: u64,
    pub epochs: usize,
    pub train_accuracy: f64,
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean softmax cross-entropy over a batch and its parameter gradient.
pub fn cross_entropy(net: &Mlp, xs: &[Vec<f64>], labels: &[usize]) -> (f64, Grads) {
    let mut grads = net.zero_grads();
    let mut loss = 0.0;
    let n = xs.len().max(1) as f64;
    for (x, &y) in xs.iter().zip(labels) {
        let tr = net.forward(x);
        let p = softmax(tr.output());
        loss -= p[y].max(1e-300).ln();
        let mut g = p;
        g[y] -= 1.0;
        net.backward(&tr, &g, &mut grads);
    }
    grads.scale(1.0 / n);
    (loss / n, grads)
}

/// Grid value with the highest score; ties go to the more sensitive CST.
pub fn pick_cst(grid: &[f64], scores: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..grid.len().min(scores.len()) {
        if scores[i] > scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    grid[best]
}

fn grid_index(grid: &[f64], v: f64) -> Option<usize> {
    grid.iter().position(|&g| g == v)
}

pub fn s1_train(examples: &[LabeledExample], grid: &[f64], hyper: &S1Hyper, seed: u64) -> Result<CstModel> {
    if grid.len() < 2 || grid.iter().any(|g| !g.is_finite()) {
        return Err(invalid("CST grid needs at least two finite values"));
    }
    if examples.len() < MIN_EXAMPLES {
        return Err(invalid(format!(
            "Service-1 needs at least {MIN_EXAMPLES} labelled examples, got {}",
            examples.len()
        )));
    }
    if hyper.batch == 0 || !(hyper.lr > 0.0) {
        return Err(invalid("batch and learning rate must be positive"));
    }
    let mut labels = Vec::with_capacity(examples.len());
    for e in examples {
        e.features.validate()?;
        labels.push(
            grid_index(grid, e.cst_dbm)
                .ok_or_else(|| invalid(format!("label {} dBm is not on the CST grid", e.cst_dbm)))?,
        );
    }
    let mut counts = vec![0usize; grid.len()];
    for &y in &labels {
        counts[y] += 1;
    }
    let classes = counts.iter().filter(|&&c| c > 0).count();
    if classes < MIN_CLASSES {
        let seen: Vec<String> = grid
            .iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|(g, c)| format!("{g} dBm x{c}"))
            .collect();
        return Err(invalid(format!(
            "labels span {classes} CST value(s) ({}), need at least {MIN_CLASSES}",
            seen.join(", ")
        )));
    }

    let n = examples.len() as f64;
    let mut mean = [0.0; FEATURE_DIM];
    let mut std = [0.0; FEATURE_DIM];
    for e in examples {
        for (m, v) in mean.iter_mut().zip(e.features.to_array()) {
            *m += v / n;
        }
    }
    for e in examples {
        for ((s, v), m) in std.iter_mut().zip(e.features.to_array()).zip(mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    let std = std.map(|v| v.sqrt().max(1e-6));
    let xs: Vec<Vec<f64>> = examples.iter().map(|e| standardize(&e.features, &mean, &std)).collect();

    let mut rng = rng_from(derive_seed(seed, &[0x51]));
    let mut dims = vec![FEATURE_DIM];
    dims.extend(&hyper.hidden_dims);
    dims.push(grid.len());
    let mut net = Mlp::new(&dims, Activation::Relu, &mut rng);
    let mut adam = Adam::new(&net, hyper.lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch) {
            let bx: Vec<Vec<f64>> = chunk.iter().map(|&i| xs[i].clone()).collect();
            let by: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = cross_entropy(&net, &bx, &by);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    layer: "service-1".into(),
                });
            }
            adam.step(&mut net, &grads);
        }
    }
    if net.first_non_finite().is_some() {
        return Err(Error::Diverged {
            epoch: hyper.epochs,
            layer: "service-1".into(),
        });
    }
    let mut model = CstModel {
        grid: grid.to_vec(),
        net,
        mean,
        std,
        seed,
        epochs: hyper.epochs,
        train_accuracy: 0.0,
    };
    let hits = examples
        .iter()
        .filter(|e| model.predict(&e.features) == e.cst_dbm)
        .count();
    model.train_accuracy = hits as f64 / n;
    Ok(model)
}

fn standardize(f: &FeatureVector, mean: &[f64; FEATURE_DIM], std: &[f64; FEATURE_DIM]) -> Vec<f64> {
    f.to_array()
        .iter()
        .zip(mean.iter().zip(std))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

impl CstModel {
    /// Class probabilities over the grid.
    pub fn scores(&self, f: &FeatureVector) -> Vec<f64> {
        softmax(&self.net.predict(&standardize(f, &self.mean, &self.std)))
    }

    pub fn predict(&self, f: &FeatureVector) -> f64 {
        pick_cst(&self.grid, &self.scores(f))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: CstModel = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.net.output_dim() != m.grid.len() || m.net.input_dim() != FEATURE_DIM {
            return Err(invalid("CST model shape does not match its grid"));
        }
        Ok(m)
    }
}

pub fn s1_predict_cst(model: &CstModel, f: &FeatureVector) -> f64 {
    model.predict(f)
}
