use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::nn::{Activation, Adam, Mlp};
use super::normalizer::{fit_normalizer_bic, ModeNormalizer};
use super::schema::{Cell, ColumnKind, CondSampler, CondVector, Row, Schema};
use crate::error::{invalid, Error, Result};
use crate::rng::{derive_seed, rng_from, SimRng};

/// Score clamp keeping the discriminator output strictly inside (0, 1).
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanHyper {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub z_dim: usize,
    pub hidden_dims: Vec<usize>,
    /// Upper bound on Gaussian modes per continuous column.
    pub max_modes: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the condition cross-entropy in the generator loss.
    pub cond_weight: f64,
}

impl Default for GanHyper {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch: 64,
            lr: 1e-3,
            z_dim: 16,
            hidden_dims: vec![64, 64],
            max_modes: 3,
            beta1: 0.5,
            beta2: 0.9,
            cond_weight: 1.0,
        }
    }
}

impl GanHyper {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.z_dim == 0 || self.max_modes == 0 {
            return Err(invalid("batch, z_dim and max_modes must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(invalid("hidden layers must be non-empty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the minimax value over the epoch's steps.
    pub value: f64,
    pub d_loss: f64,
    pub g_loss: f64,
}

/// Output block of the row representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Span {
    Tanh(usize),
    Softmax(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanModel {
    pub id: String,
    pub schema: Schema,
    pub normalizers: Vec<Option<ModeNormalizer>>,
    pub cond: CondSampler,
    pub generator: Mlp,
    pub discriminator: Mlp,
    pub z_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub epochs_trained: usize,
    pub seed: u64,
    pub history: Vec<EpochLog>,
    spans: Vec<Span>,
    /// Offset of the first cell of each column in the representation.
    col_offsets: Vec<usize>,
    rep_dim: usize,
}

/// `mean ln d_real + mean ln (1 - d_fake)`.
pub fn gan_value(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(invalid("score batches must be non-empty"));
    }
    if d_real.iter().chain(d_fake).any(|s| !(*s > 0.0 && *s < 1.0)) {
        return Err(invalid("scores must lie in (0, 1)"));
    }
    let r = d_real.iter().map(|s| s.ln()).sum::<f64>() / d_real.len() as f64;
    let f = d_fake.iter().map(|s| (1.0 - s).ln()).sum::<f64>() / d_fake.len() as f64;
    Ok(r + f)
}

fn sigmoid(a: f64) -> f64 {
    (1.0 / (1.0 + (-a).exp())).clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    // first maximum wins
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn standard_normal(n: usize, rng: &mut SimRng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

impl GanModel {
    /// Fit normalizers and build untrained nets.
    pub fn init(rows: &[Row], schema: &Schema, hyper: &GanHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        for r in rows {
            schema.validate_row(r)?;
        }
        let cond = CondSampler::from_rows(schema, rows)?;
        let mut normalizers = Vec::new();
        let mut spans = Vec::new();
        let mut col_offsets = Vec::new();
        let mut dim = 0;
        for (c, col) in schema.columns.iter().enumerate() {
            col_offsets.push(dim);
            match &col.kind {
                ColumnKind::Continuous { .. } => {
                    let values: Vec<f64> = rows
                        .iter()
                        .filter_map(|r| match r[c] {
                            Cell::Num(x) => Some(x),
                            Cell::Cat(_) => None,
                        })
                        .collect();
                    let m = fit_normalizer_bic(&values, hyper.max_modes)?;
                    spans.push(Span::Tanh(dim));
                    spans.push(Span::Softmax(dim + 1, m.modes()));
                    dim += 1 + m.modes();
                    normalizers.push(Some(m));
                }
                ColumnKind::Categorical { values } => {
                    spans.push(Span::Softmax(dim, values.len()));
                    dim += values.len();
                    normalizers.push(None);
                }
            }
        }
        let mut rng = rng_from(derive_seed(seed, &[0x6A17]));
        let mut gdims = vec![hyper.z_dim + cond.len()];
        gdims.extend(&hyper.hidden_dims);
        gdims.push(dim);
        let mut ddims = vec![dim + cond.len()];
        ddims.extend(&hyper.hidden_dims);
        ddims.push(1);
        Ok(Self {
            id: format!("gan-{seed:016x}"),
            schema: schema.clone(),
            normalizers,
            generator: Mlp::new(&gdims, Activation::Relu, &mut rng),
            discriminator: Mlp::new(&ddims, Activation::LeakyRelu(0.2), &mut rng),
            cond,
            z_dim: hyper.z_dim,
            hidden_dims: hyper.hidden_dims.clone(),
            epochs_trained: 0,
            seed,
            history: Vec::new(),
            spans,
            col_offsets,
            rep_dim: dim,
        })
    }

    pub fn rep_dim(&self) -> usize {
        self.rep_dim
    }

    /// Representation of a real row, with its continuous modes drawn by
    /// responsibility.
    pub fn encode_row(&self, row: &[Cell], rng: &mut SimRng) -> Vec<f64> {
        let mut v = vec![0.0; self.rep_dim];
        for (c, cell) in row.iter().enumerate() {
            let off = self.col_offsets[c];
            match (cell, &self.normalizers[c]) {
                (Cell::Num(x), Some(n)) => {
                    let (s, k) = n.encode(*x, rng);
                    v[off] = s;
                    v[off + 1 + k] = 1.0;
                }
                (Cell::Cat(i), _) => v[off + i] = 1.0,
                _ => {}
            }
        }
        v
    }

    fn activate(&self, logits: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; logits.len()];
        for span in &self.spans {
            match *span {
                Span::Tanh(i) => out[i] = logits[i].tanh(),
                Span::Softmax(i, n) => out[i..i + n].copy_from_slice(&softmax(&logits[i..i + n])),
            }
        }
        out
    }

    /// Chain `d loss / d rep` back through the output heads.
    fn head_backward(&self, rep: &[f64], grad_rep: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; rep.len()];
        for span in &self.spans {
            match *span {
                Span::Tanh(i) => g[i] = (1.0 - rep[i] * rep[i]) * grad_rep[i],
                Span::Softmax(i, n) => {
                    let y = &rep[i..i + n];
                    let dot: f64 = y.iter().zip(&grad_rep[i..i + n]).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        g[i + j] = y[j] * (grad_rep[i + j] - dot);
                    }
                }
            }
        }
        g
    }

    fn cond_block(&self, cv: &CondVector) -> (usize, usize) {
        match self.spans.iter().find_map(|s| match *s {
            Span::Softmax(i, n) if i == self.col_offsets[cv.column] => Some((i, n)),
            _ => None,
        }) {
            Some(b) => b,
            None => (self.col_offsets[cv.column], 1),
        }
    }

    fn d_logit(&self, rep: &[f64], cond: &[f64]) -> (super::nn::Trace, f64) {
        let input: Vec<f64> = rep.iter().chain(cond).copied().collect();
        let tr = self.discriminator.forward(&input);
        let a = tr.output()[0];
        (tr, a)
    }

    /// Discriminator score in (0, 1).
    pub fn score(&self, rep: &[f64], cond: &[f64]) -> f64 {
        sigmoid(self.d_logit(rep, cond).1)
    }

    /// Train from scratch.
    pub fn train(rows: &[Row], schema: &Schema, hyper: &GanHyper, seed: u64) -> Result<Self> {
        if rows.len() < 2 * hyper.batch {
            return Err(invalid(format!(
                "need at least {} rows for batch {}, got {}",
                2 * hyper.batch,
                hyper.batch,
                rows.len()
            )));
        }
        let mut m = Self::init(rows, schema, hyper, seed)?;
        m.fit(rows, hyper)?;
        Ok(m)
    }

    fn fit(&mut self, rows: &[Row], hyper: &GanHyper) -> Result<()> {
        let mut rng = rng_from(derive_seed(self.seed, &[0x7121]));
        // rows carrying each categorical value, for training-by-sampling
        let mut by_value: Vec<Vec<Vec<usize>>> = vec![Vec::new(); self.schema.columns.len()];
        for c in self.schema.categorical() {
            let card = self.schema.columns[c].cardinality().unwrap_or(0);
            by_value[c] = vec![Vec::new(); card];
            for (i, r) in rows.iter().enumerate() {
                if let Cell::Cat(v) = r[c] {
                    by_value[c][v].push(i);
                }
            }
        }
        let mut g_opt = Adam::new(&self.generator, hyper.lr, hyper.beta1, hyper.beta2);
        let mut d_opt = Adam::new(&self.discriminator, hyper.lr, hyper.beta1, hyper.beta2);
        let steps = (rows.len() / hyper.batch).max(1);
        let b = hyper.batch;
        for epoch in 0..hyper.epochs {
            let (mut v_sum, mut d_sum, mut g_sum) = (0.0, 0.0, 0.0);
            for _ in 0..steps {
                let conds: Vec<CondVector> =
                    (0..b).map(|_| self.cond.sample_training(&mut rng)).collect();
                let dense: Vec<Vec<f64>> = conds.iter().map(CondVector::to_dense).collect();
                let real: Vec<Vec<f64>> = conds
                    .iter()
                    .map(|cv| {
                        let pool = &by_value[cv.column][cv.value];
                        let idx = if pool.is_empty() {
                            rng.random_range(0..rows.len())
                        } else {
                            pool[rng.random_range(0..pool.len())]
                        };
                        self.encode_row(&rows[idx], &mut rng)
                    })
                    .collect();
                let z: Vec<Vec<f64>> = (0..b).map(|_| standard_normal(self.z_dim, &mut rng)).collect();
                let fake: Vec<Vec<f64>> = z
                    .iter()
                    .zip(&dense)
                    .map(|(z, c)| self.generate_rep(z, c))
                    .collect();

                let (d_loss, d_grads, value) = discriminator_pass(self, &real, &fake, &dense);
                if !d_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        layer: "discriminator loss".into(),
                    });
                }
                d_opt.step(&mut self.discriminator, &d_grads);
                if let Some(l) = self.discriminator.first_non_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        layer: format!("discriminator layer {l}"),
                    });
                }

                let (g_loss, g_grads) = generator_pass(self, &z, &conds, hyper.cond_weight);
                if !g_loss.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        layer: "generator loss".into(),
                    });
                }
                g_opt.step(&mut self.generator, &g_grads);
                if let Some(l) = self.generator.first_non_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        layer: format!("generator layer {l}"),
                    });
                }
                v_sum += value;
                d_sum += d_loss;
                g_sum += g_loss;
            }
            let k = steps as f64;
            self.history.push(EpochLog {
                epoch,
                value: v_sum / k,
                d_loss: d_sum / k,
                g_loss: g_sum / k,
            });
            self.epochs_trained += 1;
        }
        Ok(())
    }

    pub fn generate_rep(&self, z: &[f64], cond: &[f64]) -> Vec<f64> {
        let input: Vec<f64> = z.iter().chain(cond).copied().collect();
        self.activate(&self.generator.predict(&input))
    }

    /// Sample `n` rows. With a condition every row carries the conditioned
    /// value; without one the condition is drawn from the training
    /// frequencies.
    pub fn generate(&self, n: usize, condition: Option<(&str, &str)>, seed: u64) -> Result<Vec<Row>> {
        let forced = match condition {
            Some((c, v)) => {
                let (ci, vi) = self.schema.resolve(c, v)?;
                Some(self.cond.make(ci, vi)?)
            }
            None => None,
        };
        let mut rng = rng_from(derive_seed(seed, &[0x6E7E]));
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let cv = forced.unwrap_or_else(|| self.cond.sample_original(&mut rng));
            let z = standard_normal(self.z_dim, &mut rng);
            let rep = self.generate_rep(&z, &cv.to_dense());
            out.push(self.decode_rep(&rep, forced.as_ref()));
        }
        Ok(out)
    }

    fn decode_rep(&self, rep: &[f64], forced: Option<&CondVector>) -> Row {
        self.schema
            .columns
            .iter()
            .enumerate()
            .map(|(c, col)| {
                let off = self.col_offsets[c];
                match (&col.kind, &self.normalizers[c]) {
                    (ColumnKind::Continuous { lower }, Some(n)) => {
                        let k = argmax(&rep[off + 1..off + 1 + n.modes()]);
                        let x = n.decode(rep[off], k);
                        Cell::Num(lower.map_or(x, |lo| x.max(lo)))
                    }
                    (ColumnKind::Categorical { values }, _) => match forced {
                        Some(cv) if cv.column == c => Cell::Cat(cv.value),
                        _ => Cell::Cat(argmax(&rep[off..off + values.len()])),
                    },
                    _ => unreachable!("continuous column without normalizer"),
                }
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Training log as CSV: `epoch,value,d_loss,g_loss`.
    pub fn write_history_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "value", "d_loss", "g_loss"])?;
        for e in &self.history {
            out.write_record([
                e.epoch.to_string(),
                e.value.to_string(),
                e.d_loss.to_string(),
                e.g_loss.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Discriminator loss `-(mean ln D(real) + mean ln(1 - D(fake)))`, its
/// gradient and the minimax value.
fn discriminator_pass(
    m: &GanModel,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    cond: &[Vec<f64>],
) -> (f64, super::nn::Grads, f64) {
    let mut grads = m.discriminator.zero_grads();
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let mut loss = 0.0;
    let (mut sr, mut sf) = (Vec::new(), Vec::new());
    for (x, c) in real.iter().zip(cond) {
        let (tr, a) = m.d_logit(x, c);
        loss += softplus(-a) / nr;
        sr.push(sigmoid(a));
        m.discriminator.backward(&tr, &[(sigmoid_raw(a) - 1.0) / nr], &mut grads);
    }
    for (x, c) in fake.iter().zip(cond) {
        let (tr, a) = m.d_logit(x, c);
        loss += softplus(a) / nf;
        sf.push(sigmoid(a));
        m.discriminator.backward(&tr, &[sigmoid_raw(a) / nf], &mut grads);
    }
    let value = gan_value(&sr, &sf).unwrap_or(-loss);
    (loss, grads, value)
}

fn sigmoid_raw(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Non-saturating generator loss `-mean ln D(G(z))` plus the weighted
/// cross-entropy of the conditioned block, and its gradient.
fn generator_pass(m: &GanModel, z: &[Vec<f64>], conds: &[CondVector], cond_weight: f64) -> (f64, super::nn::Grads) {
    let mut grads = m.generator.zero_grads();
    let n = z.len() as f64;
    let mut loss = 0.0;
    let rd = m.rep_dim;
    for (zi, cv) in z.iter().zip(conds) {
        let c = cv.to_dense();
        let input: Vec<f64> = zi.iter().chain(&c).copied().collect();
        let gtr = m.generator.forward(&input);
        let rep = m.activate(gtr.output());
        let (dtr, a) = m.d_logit(&rep, &c);
        loss += softplus(-a) / n;
        let mut dgrads = m.discriminator.zero_grads();
        let gin = m
            .discriminator
            .backward(&dtr, &[(sigmoid_raw(a) - 1.0) / n], &mut dgrads);
        let mut glogits = m.head_backward(&rep, &gin[..rd]);
        if cond_weight > 0.0 {
            let (off, len) = m.cond_block(cv);
            let p = &rep[off..off + len];
            let logits = &gtr.output()[off..off + len];
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = top + logits.iter().map(|l| (l - top).exp()).sum::<f64>().ln();
            loss += cond_weight * (lse - logits[cv.value]) / n;
            for j in 0..len {
                let target = if j == cv.value { 1.0 } else { 0.0 };
                glogits[off + j] += cond_weight * (p[j] - target) / n;
            }
        }
        m.generator.backward(&gtr, &glogits, &mut grads);
    }
    (loss, grads)
}

/// Discriminator loss and its flat parameter gradient on given
/// representations.
pub fn discriminator_objective(
    model: &GanModel,
    real: &[Vec<f64>],
    fake: &[Vec<f64>],
    cond: &[CondVector],
) -> (f64, Vec<f64>) {
    let dense: Vec<Vec<f64>> = cond.iter().map(CondVector::to_dense).collect();
    let (loss, g, _) = discriminator_pass(model, real, fake, &dense);
    (loss, g.flat())
}

/// Generator loss and its flat parameter gradient for fixed noise and
/// conditions.
pub fn generator_objective(model: &GanModel, z: &[Vec<f64>], cond: &[CondVector], cond_weight: f64) -> (f64, Vec<f64>) {
    let (loss, g) = generator_pass(model, z, cond, cond_weight);
    (loss, g.flat())
}

#[cfg(test)]
#[path = "model_tests.rs"]
mod tests;
