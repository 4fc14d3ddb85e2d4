//! Service-2: tabular Q-learning over transmit power.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use crate::error::{invalid, Result};
use crate::rng::SimRng;

pub const TPC_GRID: [f64; 6] = [10.0, 12.0, 14.0, 16.0, 18.0, 20.0];
pub const LOAD_BUCKETS: usize = 5;
pub const INTERFERENCE_BUCKETS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QState {
    pub load: usize,
    pub interference: usize,
}

impl QState {
    /// Load in fifths of capacity; interference as neighbours heard, two
    /// per bucket.
    pub fn from_features(f: &FeatureVector) -> Self {
        Self {
            load: ((f.load_fraction * LOAD_BUCKETS as f64) as usize).min(LOAD_BUCKETS - 1),
            interference: ((f.neighbours / 2.0) as usize).min(INTERFERENCE_BUCKETS - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QHyper {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for QHyper {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            gamma: 0.9,
            epsilon: 0.1,
        }
    }
}

impl QHyper {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        // gamma = 0 is the one-step special case
        if unit(self.alpha) && unit(self.epsilon) && (0.0..=1.0).contains(&self.gamma) {
            Ok(())
        } else {
            Err(invalid(format!("Q-learning hyper-parameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpcPolicy {
    pub grid: Vec<f64>,
    pub hyper: QHyper,
    /// `load × interference × action`, row-major.
    pub q: Vec<f64>,
    pub updates: u64,
}

impl TpcPolicy {
    pub fn new(grid: &[f64], hyper: QHyper) -> Result<Self> {
        hyper.validate()?;
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("TPC grid must be non-empty and increasing"));
        }
        Ok(Self {
            grid: grid.to_vec(),
            hyper,
            q: vec![0.0; LOAD_BUCKETS * INTERFERENCE_BUCKETS * grid.len()],
            updates: 0,
        })
    }

    fn row(&self, s: QState) -> Result<usize> {
        if s.load >= LOAD_BUCKETS || s.interference >= INTERFERENCE_BUCKETS {
            return Err(invalid(format!("unknown Q state {s:?}")));
        }
        Ok((s.load * INTERFERENCE_BUCKETS + s.interference) * self.grid.len())
    }

    pub fn values(&self, s: QState) -> Result<&[f64]> {
        let r = self.row(s)?;
        Ok(&self.q[r..r + self.grid.len()])
    }

    pub fn set(&mut self, s: QState, action: usize, v: f64) -> Result<()> {
        let r = self.row(s)?;
        if action >= self.grid.len() {
            return Err(invalid(format!("unknown action {action}")));
        }
        self.q[r + action] = v;
        Ok(())
    }

    /// One Q-learning step.
    pub fn update(&mut self, s: QState, action: usize, reward: f64, next: QState) -> Result<()> {
        if !(0.0..=1.0).contains(&reward) {
            return Err(invalid(format!("reward {reward} outside [0, 1]")));
        }
        if action >= self.grid.len() {
            return Err(invalid(format!("unknown action {action}")));
        }
        let target = reward
            + self.hyper.gamma
                * self
                    .values(next)?
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max);
        let r = self.row(s)?;
        let q = &mut self.q[r + action];
        *q += self.hyper.alpha * (target - *q);
        self.updates += 1;
        Ok(())
    }

    /// Greedy action index; ties go to the lower power.
    pub fn greedy(&self, s: QState) -> Result<usize> {
        let v = self.values(s)?;
        let mut best = 0;
        for (i, &x) in v.iter().enumerate().skip(1) {
            if x > v[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn select_index(&self, s: QState, explore: bool, rng: &mut SimRng) -> Result<usize> {
        if explore && rng.random::<f64>() < self.hyper.epsilon {
            self.row(s)?;
            return Ok(rng.random_range(0..self.grid.len()));
        }
        self.greedy(s)
    }

    pub fn select_tpc(&self, s: QState, explore: bool, rng: &mut SimRng) -> Result<f64> {
        Ok(self.grid[self.select_index(s, explore, rng)?])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let p: TpcPolicy = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.hyper.validate()?;
        if p.q.len() != LOAD_BUCKETS * INTERFERENCE_BUCKETS * p.grid.len() || p.q.iter().any(|v| !v.is_finite()) {
            return Err(invalid("Q table does not match its grid"));
        }
        Ok(p)
    }
}

pub fn s2_update(policy: &mut TpcPolicy, s: QState, action: usize, reward: f64, next: QState) -> Result<()> {
    policy.update(s, action, reward, next)
}

pub fn s2_select_tpc(policy: &TpcPolicy, s: QState, explore: bool, rng: &mut SimRng) -> Result<f64> {
    policy.select_tpc(s, explore, rng)
}

/// Run `steps` ε-greedy interactions. `env` maps (state, action index) to
/// (reward, next state); `reset` gives the state an episode starts from.
pub fn train_s2<E, R>(policy: &mut TpcPolicy, steps: usize, episode_len: usize, mut reset: R, mut env: E, rng: &mut SimRng) -> Result<()>
where
    R: FnMut(&mut SimRng) -> Result<QState>,
    E: FnMut(QState, usize, &mut SimRng) -> Result<(f64, QState)>,
{
    if episode_len == 0 {
        return Err(invalid("episode length must be positive"));
    }
    let mut s = reset(rng)?;
    for k in 0..steps {
        if k > 0 && k % episode_len == 0 {
            s = reset(rng)?;
        }
        let a = policy.select_index(s, true, rng)?;
        let (r, next) = env(s, a, rng)?;
        policy.update(s, a, r, next)?;
        s = next;
    }
    Ok(())
}
