//! Experiment runner: topology-size scaling, strategy comparison and the
//! twinning-interval study, with CSV/JSON reports.

mod experiments;
mod report;
mod setup;
mod stats;
mod twinning;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::SimConfig;
use crate::par::ExecMode;
use crate::scenario::{ScenarioKind, ScenarioParams};
use crate::services::{Grids, QHyper, S1Hyper, StrategyMode};
use crate::tabgan::GanHyper;
use crate::whatif::WeightProfile;

pub use experiments::{eval_options, strategy_input, run_experiment, run_scaling_experiment, run_strategy_experiment};
pub use report::{
    emit_report, CellSummary, DirectionalCheck, ExperimentKind, ExperimentReport, Regime, ReportFormat,
    ScalingRecord, StrategyRecord, TwinningRecord, FORMAT_VERSION, SCALING_HEADER, STRATEGY_HEADER,
    SUMMARY_HEADER, TWINNING_HEADER,
};
pub use setup::{
    build_network, label_s1_examples, make_trial, observe, train_gan, train_models, train_s1, train_s2, trial_seed,
    Models, Trial,
};
pub use stats::{paired_t_test, spearman, summarize, PairedTest, Summary};
pub use twinning::{physical_traffic, run_twinning_experiment, run_twinning_trial, LevelSelector};

/// Topology sizes the experiments accept.
pub const ALLOWED_SIZES: [usize; 5] = [3, 9, 27, 81, 243];
pub const FULL_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkParams {
    pub spacing_m: f64,
    pub ue_per_bs: (usize, usize),
    pub per_bss_mbps: f64,
    /// Length of the observation run that seeds each trial's twin.
    pub observe_s: f64,
    pub sample_period_s: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self {
            spacing_m: 20.0,
            ue_per_bs: (10, 15),
            per_bss_mbps: 4.0,
            observe_s: 1.0,
            sample_period_s: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingParams {
    /// BSs in each training network.
    pub size: usize,
    /// Load multipliers cycled over the training networks.
    pub load_factors: Vec<f64>,
    /// BS spacings cycled over the training networks, one per full pass
    /// over the load factors.
    pub spacings_m: Vec<f64>,
    pub s1_networks: usize,
    pub s1: S1Hyper,
    pub s2_networks: usize,
    pub s2_steps: usize,
    pub s2_episode_len: usize,
    pub q: QHyper,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self {
            size: 9,
            load_factors: vec![0.5, 1.0, 1.5, 2.0, 2.5],
            spacings_m: vec![15.0, 20.0, 30.0, 40.0],
            s1_networks: 60,
            s1: S1Hyper::default(),
            s2_networks: 20,
            s2_steps: 5000,
            s2_episode_len: 20,
            q: QHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinningParams {
    pub size: usize,
    pub horizon_s: f64,
    /// ξ a configuration must exceed to be deployed.
    pub threshold: f64,
    pub spike_factor: f64,
    pub spike_width_s: f64,
    /// Mean gap between spike starts.
    pub spike_gap_s: f64,
    /// Quantization step of the load level the twin re-selects for.
    pub level_step: f64,
    pub max_level: f64,
}

impl Default for TwinningParams {
    fn default() -> Self {
        Self {
            size: 9,
            horizon_s: 300.0,
            threshold: 0.8,
            spike_factor: 2.0,
            spike_width_s: 10.0,
            spike_gap_s: 40.0,
            level_step: 0.5,
            max_level: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub modes: Vec<StrategyMode>,
    pub twinning_intervals_s: Vec<f64>,
    pub weights: WeightProfile,
    pub scenarios: Vec<ScenarioKind>,
    pub scenario_params: ScenarioParams,
    pub network: NetworkParams,
    pub sim: SimConfig,
    pub grids: Grids,
    pub gan: GanHyper,
    pub training: TrainingParams,
    pub twinning: TwinningParams,
    pub exec_mode: ExecMode,
    /// Stop starting new trials after this many seconds; the report is then
    /// flagged incomplete.
    pub max_wall_s: Option<f64>,
    /// Pre-trained models; trained in-process when absent.
    pub s1_model: Option<PathBuf>,
    pub s2_model: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 42,
            sizes: vec![3, 9, 27],
            trials: 30,
            modes: StrategyMode::ALL.to_vec(),
            twinning_intervals_s: vec![1.0, 5.0, 10.0, 30.0, 60.0],
            weights: WeightProfile::default(),
            scenarios: ScenarioKind::ALL.to_vec(),
            scenario_params: ScenarioParams::default(),
            network: NetworkParams::default(),
            sim: SimConfig {
                sinr_threshold_db: 10.0,
                ..SimConfig::default()
            },
            grids: Grids::default(),
            gan: GanHyper {
                epochs: 100,
                hidden_dims: vec![32, 32],
                ..GanHyper::default()
            },
            training: TrainingParams::default(),
            twinning: TwinningParams::default(),
            exec_mode: ExecMode::default(),
            max_wall_s: None,
            s1_model: None,
            s2_model: None,
            out_dir: None,
        }
    }
}

fn no_duplicates<T: PartialEq + std::fmt::Debug>(name: &str, xs: &[T]) -> Result<()> {
    for (i, x) in xs.iter().enumerate() {
        if xs[..i].contains(x) {
            return Err(invalid(format!("{name} lists {x:?} twice")));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// All five sizes with 100 trials each.
    pub fn full(mut self) -> Self {
        self.sizes = ALLOWED_SIZES.to_vec();
        self.trials = FULL_TRIALS;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|s| !ALLOWED_SIZES.contains(s)) {
            return Err(invalid(format!("sizes {:?} must be drawn from {ALLOWED_SIZES:?}", self.sizes)));
        }
        no_duplicates("sizes", &self.sizes)?;
        if self.modes.is_empty() {
            return Err(invalid("no strategy modes"));
        }
        no_duplicates("modes", &self.modes)?;
        if self.scenarios.is_empty() {
            return Err(invalid("no scenarios"));
        }
        no_duplicates("scenarios", &self.scenarios)?;
        if self.twinning_intervals_s.is_empty()
            || self
                .twinning_intervals_s
                .iter()
                .any(|&i| !(i.is_finite() && i >= self.network.sample_period_s))
        {
            return Err(invalid("twinning intervals must be finite and at least one sample period"));
        }
        no_duplicates("twinning intervals", &self.twinning_intervals_s)?;
        self.weights.validate()?;
        self.scenario_params.validate()?;
        self.grids.validate()?;
        self.gan.validate()?;
        let n = &self.network;
        if !(n.spacing_m > 0.0 && n.per_bss_mbps > 0.0 && n.observe_s > 0.0 && n.sample_period_s > 0.0)
            || n.ue_per_bs.0 > n.ue_per_bs.1
            || n.observe_s < n.sample_period_s
        {
            return Err(invalid(format!("bad network parameters {n:?}")));
        }
        let t = &self.training;
        if !ALLOWED_SIZES.contains(&t.size)
            || t.load_factors.is_empty()
            || t.load_factors.iter().any(|f| !(*f > 0.0))
            || t.spacings_m.is_empty()
            || t.spacings_m.iter().any(|s| !(*s > 0.0))
            || t.s2_networks == 0
            || t.s2_episode_len == 0
        {
            return Err(invalid("bad training parameters"));
        }
        t.q.validate()?;
        let w = &self.twinning;
        if !ALLOWED_SIZES.contains(&w.size)
            || !(0.0..=1.0).contains(&w.threshold)
            || !(w.horizon_s > 0.0 && w.spike_factor > 0.0 && w.spike_width_s > 0.0 && w.spike_gap_s > 0.0)
            || !(w.level_step > 0.0 && w.max_level >= w.level_step)
        {
            return Err(invalid(format!("bad twinning parameters {w:?}")));
        }
        if let Some(m) = self.max_wall_s {
            if !(m > 0.0) {
                return Err(invalid("max_wall_s must be positive"));
            }
        }
        Ok(())
    }
}

/// Wall-clock budget of a run.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Deadline(Option<Instant>);

impl Deadline {
    pub(crate) fn after(secs: Option<f64>) -> Self {
        Deadline(secs.map(|s| Instant::now() + Duration::from_secs_f64(s)))
    }

    pub(crate) fn expired(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() >= d)
    }
}
