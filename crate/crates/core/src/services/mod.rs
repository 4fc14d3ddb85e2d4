//! Service layer: feature extraction, the CST classifier (Service-1), the
//! TPC Q-learner (Service-2) and the six strategies that turn them into
//! candidate radio configurations.

mod features;
mod s1;
mod s2;

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::netsim::RadioConfig;
use crate::par;
use crate::scenario::ScenarioSpec;
use crate::twingraph::TwinSnapshot;
use crate::whatif::{evaluate_config, EffectivenessReport, EvalOptions, NetworkModel};

pub use features::{preprocess_flows, FeatureVector, FEATURE_DIM};
pub use s1::{
    cross_entropy, pick_cst, s1_predict_cst, s1_train, CstModel, LabeledExample, S1Hyper, CST_GRID, MIN_CLASSES,
    MIN_EXAMPLES,
};
pub use s2::{
    s2_select_tpc, s2_update, train_s2, QHyper, QState, TpcPolicy, INTERFERENCE_BUCKETS, LOAD_BUCKETS, TPC_GRID,
};

pub const DEFAULT_CST_DBM: f64 = -72.0;
pub const DEFAULT_TPC_DBM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grids {
    pub cst: Vec<f64>,
    pub tpc: Vec<f64>,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            cst: CST_GRID.to_vec(),
            tpc: TPC_GRID.to_vec(),
        }
    }
}

impl Grids {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("CST", &self.cst), ("TPC", &self.tpc)] {
            if g.is_empty() || g.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid(format!("{name} grid must be non-empty and increasing")));
            }
        }
        for &c in &self.cst {
            for &t in &self.tpc {
                RadioConfig::new(c, t).validate()?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyMode {
    BruteForce,
    OnlyS1,
    OnlyS2,
    S1CrossS2,
    S2CrossS1,
    S1AndS2Independent,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 6] = [
        StrategyMode::BruteForce,
        StrategyMode::OnlyS1,
        StrategyMode::OnlyS2,
        StrategyMode::S1CrossS2,
        StrategyMode::S2CrossS1,
        StrategyMode::S1AndS2Independent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyMode::BruteForce => "brute-force",
            StrategyMode::OnlyS1 => "only-s1",
            StrategyMode::OnlyS2 => "only-s2",
            StrategyMode::S1CrossS2 => "s1-cross-s2",
            StrategyMode::S2CrossS1 => "s2-cross-s1",
            StrategyMode::S1AndS2Independent => "independent",
        }
    }

    pub fn needs_s1(self) -> bool {
        matches!(
            self,
            StrategyMode::OnlyS1 | StrategyMode::S1CrossS2 | StrategyMode::S1AndS2Independent
        )
    }

    pub fn needs_s2(self) -> bool {
        matches!(
            self,
            StrategyMode::OnlyS2 | StrategyMode::S2CrossS1 | StrategyMode::S1AndS2Independent
        )
    }

    /// Number of what-if evaluations the mode performs.
    pub fn evaluations(self, grids: &Grids) -> usize {
        match self {
            StrategyMode::BruteForce => grids.cst.len() * grids.tpc.len(),
            StrategyMode::S1CrossS2 => grids.tpc.len(),
            StrategyMode::S2CrossS1 => grids.cst.len(),
            _ => 1,
        }
    }
}

impl fmt::Display for StrategyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        StrategyMode::ALL
            .into_iter()
            .find(|m| m.name() == key || format!("{m:?}").to_ascii_lowercase() == key.replace('-', ""))
            .ok_or_else(|| invalid(format!("unknown strategy mode {s:?}")))
    }
}

/// Everything a strategy needs besides its mode.
pub struct StrategyInput<'a> {
    pub snapshot: &'a TwinSnapshot,
    pub net: &'a NetworkModel,
    pub scenarios: &'a [ScenarioSpec],
    pub opts: &'a EvalOptions,
    pub grids: &'a Grids,
    pub s1: Option<&'a CstModel>,
    pub s2: Option<&'a TpcPolicy>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub mode: StrategyMode,
    /// Reports in candidate order.
    pub reports: Vec<EffectivenessReport>,
    pub best: EffectivenessReport,
    pub wall_time_s: f64,
    pub evaluations: usize,
}

fn model<'a, T>(m: Option<&'a T>, mode: StrategyMode, which: &str) -> Result<&'a T> {
    m.ok_or_else(|| invalid(format!("mode {mode} needs the {which} model")))
}

/// Configurations a mode evaluates, in grid order. Service-1 chooses the CST
/// as if the TPC stayed at its default and Service-2 the TPC as if the CST
/// did, so their independent picks may not fit together.
pub fn candidate_configs(mode: StrategyMode, input: &StrategyInput) -> Result<Vec<RadioConfig>> {
    let g = input.grids;
    g.validate()?;
    let cst = || -> Result<f64> {
        let m = model(input.s1, mode, "Service-1")?;
        let f = preprocess_flows(input.snapshot, &input.opts.sim)?;
        Ok(m.predict(&f))
    };
    let tpc = || -> Result<f64> {
        let p = model(input.s2, mode, "Service-2")?;
        let f = preprocess_flows(input.snapshot, &input.opts.sim)?;
        Ok(p.grid[p.greedy(QState::from_features(&f))?])
    };
    let configs = match mode {
        StrategyMode::BruteForce => g
            .cst
            .iter()
            .flat_map(|&c| g.tpc.iter().map(move |&t| RadioConfig::new(c, t)))
            .collect(),
        StrategyMode::OnlyS1 => vec![RadioConfig::new(cst()?, DEFAULT_TPC_DBM)],
        StrategyMode::OnlyS2 => vec![RadioConfig::new(DEFAULT_CST_DBM, tpc()?)],
        StrategyMode::S1CrossS2 => {
            let c = cst()?;
            g.tpc.iter().map(|&t| RadioConfig::new(c, t)).collect()
        }
        StrategyMode::S2CrossS1 => {
            let t = tpc()?;
            g.cst.iter().map(|&c| RadioConfig::new(c, t)).collect()
        }
        StrategyMode::S1AndS2Independent => {
            let (c, t) = par::join(input.opts.mode, cst, tpc);
            vec![RadioConfig::new(c?, t?)]
        }
    };
    Ok(configs)
}

/// Highest ξ among valid reports; ties go to lower power, then lower |CST|.
pub fn best_report(reports: &[EffectivenessReport]) -> Option<&EffectivenessReport> {
    reports.iter().filter(|r| r.valid).min_by(|a, b| {
        b.xi.total_cmp(&a.xi)
            .then(a.config.tpc_dbm.total_cmp(&b.config.tpc_dbm))
            .then(a.config.cst_dbm.abs().total_cmp(&b.config.cst_dbm.abs()))
    })
}

/// Run one strategy. All candidates share the input seed, so the same
/// configuration scores identically under every mode. Wall time covers
/// feature extraction, model inference and the what-if simulations.
pub fn run_strategy(mode: StrategyMode, input: &StrategyInput) -> Result<StrategyOutcome> {
    let started = Instant::now();
    let configs = candidate_configs(mode, input)?;
    let reports = par::map(input.opts.mode, &configs, |c| {
        evaluate_config(*c, input.net, input.scenarios, input.opts, input.seed)
    });
    let wall_time_s = started.elapsed().as_secs_f64();
    let best = match best_report(&reports) {
        Some(b) => b.clone(),
        None => {
            let cause = reports
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_else(|| "no candidates".into());
            return Err(Error::Invariant(format!("mode {mode}: no valid evaluation ({cause})")));
        }
    };
    Ok(StrategyOutcome {
        mode,
        evaluations: reports.len(),
        reports,
        best,
        wall_time_s,
    })
}

#[cfg(test)]
mod tests;
