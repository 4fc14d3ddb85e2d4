use std::cell::Cell;

use super::ExperimentConfig;
use crate::dtconnect::{Collector, TwinningInterval};
use crate::error::{invalid, Result};
use crate::netsim::{build_topology, RadioConfig, SimConfig, Simulation, TrafficMix, TrafficProfile};
use crate::par;
use crate::rng::{derive_seed, rng_from};
use crate::scenario::{make_scenario, ScenarioSpec};
use crate::services::{
    best_report, preprocess_flows, s1_train, CstModel, LabeledExample, QState, TpcPolicy,
    DEFAULT_CST_DBM, DEFAULT_TPC_DBM,
};
use crate::tabgan::{records_from_network, train_flows, GanModel, HourBucket};
use crate::twingraph::{TwinGraph, TwinSnapshot};
use crate::whatif::{evaluate_config, EvalOptions, NetworkModel, Origin, WeightProfile};

const TAG_GAN: u64 = 0x6A4E;
const TAG_S1: u64 = 0x51;
const TAG_S2: u64 = 0x52;

pub fn trial_seed(master: u64, size: usize, trial: usize) -> u64 {
    derive_seed(master, &[size as u64, trial as u64])
}

/// A topology of `size` BSs with traffic at `load_factor` times the
/// configured per-BSS load.
pub fn build_network(cfg: &ExperimentConfig, size: usize, load_factor: f64, seed: u64) -> Result<NetworkModel> {
    build_network_at(cfg, size, cfg.network.spacing_m, load_factor, seed)
}

fn build_network_at(cfg: &ExperimentConfig, size: usize, spacing_m: f64, load_factor: f64, seed: u64) -> Result<NetworkModel> {
    let n = &cfg.network;
    let topology = build_topology(size, n.ue_per_bs, spacing_m, seed)?;
    let traffic = TrafficProfile::for_topology(&topology, n.per_bss_mbps * load_factor, &TrafficMix::default(), seed)?;
    Ok(NetworkModel { topology, traffic })
}

/// Run the network under `radio` for `seconds`, stream its telemetry into a
/// fresh twin and return the twin's latest retrospective snapshot.
pub fn observe(
    net: &NetworkModel,
    sim: &SimConfig,
    radio: RadioConfig,
    seconds: f64,
    sample_period_s: f64,
    seed: u64,
) -> Result<TwinSnapshot> {
    let interval = TwinningInterval {
        seconds,
        sample_period: sample_period_s,
    };
    let mut collector = Collector::new(interval)?;
    let mut s = Simulation::new(sim, &net.topology, &net.traffic, seed)?;
    s.set_radio(radio)?;
    let mut graph = TwinGraph::default();
    let samples = s.run_sampled(sim.slots_for_seconds(seconds), sim.slots_for_seconds(sample_period_s));
    for sample in &samples {
        if let Some(batch) = collector.push(sample) {
            graph.apply_telemetry(&batch)?;
        }
    }
    let snap = graph.snapshot_retrospective()?;
    if snap.is_empty() {
        return Err(invalid("observation produced no telemetry"));
    }
    Ok((*snap).clone())
}

/// Everything one trial of the scaling and strategy experiments works on.
#[derive(Debug, Clone)]
pub struct Trial {
    pub size: usize,
    pub index: usize,
    pub seed: u64,
    pub net: NetworkModel,
    pub snapshot: TwinSnapshot,
    pub scenarios: Vec<ScenarioSpec>,
}

fn scenarios_for(cfg: &ExperimentConfig, snapshot: &TwinSnapshot, gan: &GanModel, seed: u64) -> Result<Vec<ScenarioSpec>> {
    cfg.scenarios
        .iter()
        .map(|&k| make_scenario(k, snapshot, Some(gan), &cfg.scenario_params, seed))
        .collect()
}

pub fn make_trial(cfg: &ExperimentConfig, gan: &GanModel, size: usize, index: usize) -> Result<Trial> {
    let seed = trial_seed(cfg.master_seed, size, index);
    let net = build_network(cfg, size, 1.0, seed)?;
    let snapshot = observe(
        &net,
        &cfg.sim,
        RadioConfig::default(),
        cfg.network.observe_s,
        cfg.network.sample_period_s,
        seed,
    )?;
    let scenarios = scenarios_for(cfg, &snapshot, gan, seed)?;
    Ok(Trial {
        size,
        index,
        seed,
        net,
        snapshot,
        scenarios,
    })
}

/// Flow generator trained on records of one training network across the
/// four hour buckets, each bucket scaled by the day curve.
pub fn train_gan(cfg: &ExperimentConfig) -> Result<GanModel> {
    let seed = derive_seed(cfg.master_seed, &[TAG_GAN]);
    let size = cfg.training.size;
    let net = build_network(cfg, size, 1.0, seed)?;
    let mut records = Vec::new();
    for (h, f) in HourBucket::ALL.into_iter().zip(cfg.scenario_params.day_curve) {
        let mut traffic = net.traffic.clone();
        traffic.scale(f.max(1e-3));
        records.extend(records_from_network(&net.topology, &traffic, h));
    }
    train_flows(&records, size, &cfg.gan, seed)
}

fn eval_opts(cfg: &ExperimentConfig, weights: WeightProfile) -> EvalOptions {
    EvalOptions {
        sim: cfg.sim.clone(),
        weights,
        mode: cfg.exec_mode,
        origin: Origin::Twin,
    }
}

fn training_network(cfg: &ExperimentConfig, tag: u64, k: usize) -> Result<(u64, NetworkModel)> {
    let t = &cfg.training;
    let seed = derive_seed(cfg.master_seed, &[tag, k as u64]);
    let nf = t.load_factors.len();
    let factor = t.load_factors[k % nf];
    let spacing = t.spacings_m[(k / nf) % t.spacings_m.len()];
    Ok((seed, build_network_at(cfg, t.size, spacing, factor, seed)?))
}

/// Service-1 training data: for each training network, the CST whose
/// configuration at the default TPC scores the highest ξ.
pub fn label_s1_examples(cfg: &ExperimentConfig, gan: &GanModel) -> Result<Vec<LabeledExample>> {
    let opts = eval_opts(cfg, cfg.weights);
    let rows = par::map_range(cfg.exec_mode, cfg.training.s1_networks, |k| -> Result<LabeledExample> {
        let (seed, net) = training_network(cfg, TAG_S1, k)?;
        let snapshot = observe(
            &net,
            &cfg.sim,
            RadioConfig::default(),
            cfg.network.observe_s,
            cfg.network.sample_period_s,
            seed,
        )?;
        let scenarios = scenarios_for(cfg, &snapshot, gan, seed)?;
        let reports: Vec<_> = cfg
            .grids
            .cst
            .iter()
            .map(|&c| evaluate_config(RadioConfig::new(c, DEFAULT_TPC_DBM), &net, &scenarios, &opts, seed))
            .collect();
        let best = best_report(&reports).ok_or_else(|| invalid("no valid report while labelling"))?;
        Ok(LabeledExample {
            features: preprocess_flows(&snapshot, &cfg.sim)?,
            cst_dbm: best.config.cst_dbm,
        })
    });
    rows.into_iter().collect()
}

pub fn train_s1(cfg: &ExperimentConfig, gan: &GanModel) -> Result<CstModel> {
    let examples = label_s1_examples(cfg, gan)?;
    s1_train(&examples, &cfg.grids.cst, &cfg.training.s1, derive_seed(cfg.master_seed, &[TAG_S1]))
}

/// Per training network: the state observed and the scenario-A composite
/// score obtained under each transmit power, with the CST at its default.
struct S2Table {
    states: Vec<QState>,
    rewards: Vec<f64>,
}

/// Q-learning against training networks. An action deploys a TPC at the
/// default CST; the reward is the scenario-A composite score and the next
/// state is what the twin observes under the new power.
pub fn train_s2(cfg: &ExperimentConfig) -> Result<TpcPolicy> {
    let grid = &cfg.grids.tpc;
    let a_only = eval_opts(cfg, WeightProfile::a_only(cfg.weights.kpi));
    let tables = par::map_range(cfg.exec_mode, cfg.training.s2_networks, |k| -> Result<S2Table> {
        let (seed, net) = training_network(cfg, TAG_S2, k)?;
        let base = observe(
            &net,
            &cfg.sim,
            RadioConfig::default(),
            cfg.network.observe_s,
            cfg.network.sample_period_s,
            seed,
        )?;
        let scenario = make_scenario(crate::scenario::ScenarioKind::A, &base, None, &cfg.scenario_params, seed)?;
        let mut states = Vec::new();
        let mut rewards = Vec::new();
        for &t in grid {
            let radio = RadioConfig::new(DEFAULT_CST_DBM, t);
            let snap = observe(&net, &cfg.sim, radio, cfg.network.observe_s, cfg.network.sample_period_s, seed)?;
            states.push(QState::from_features(&preprocess_flows(&snap, &cfg.sim)?));
            let r = evaluate_config(radio, &net, std::slice::from_ref(&scenario), &a_only, seed);
            if !r.valid {
                return Err(invalid(format!("training evaluation failed: {:?}", r.error)));
            }
            rewards.push(r.xi);
        }
        Ok(S2Table { states, rewards })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let default_idx = grid
        .iter()
        .position(|&t| t == DEFAULT_TPC_DBM)
        .unwrap_or(grid.len() - 1);
    let mut policy = TpcPolicy::new(grid, cfg.training.q)?;
    let mut rng = rng_from(derive_seed(cfg.master_seed, &[TAG_S2]));
    let current = Cell::new(0usize);
    let t = &cfg.training;
    crate::services::train_s2(
        &mut policy,
        t.s2_steps,
        t.s2_episode_len,
        |r: &mut crate::rng::SimRng| {
            use rand::Rng;
            let k = r.random_range(0..tables.len());
            current.set(k);
            Ok(tables[k].states[default_idx])
        },
        |_, a, _| {
            let tb = &tables[current.get()];
            Ok((tb.rewards[a].clamp(0.0, 1.0), tb.states[a]))
        },
        &mut rng,
    )?;
    Ok(policy)
}

/// The generator and both service models.
#[derive(Debug, Clone)]
pub struct Models {
    pub gan: GanModel,
    pub s1: CstModel,
    pub s2: TpcPolicy,
}

/// Load models named in the config, train the rest.
pub fn train_models(cfg: &ExperimentConfig) -> Result<Models> {
    let gan = train_gan(cfg)?;
    let s1 = match &cfg.s1_model {
        Some(p) => CstModel::load(p)?,
        None => train_s1(cfg, &gan)?,
    };
    let s2 = match &cfg.s2_model {
        Some(p) => TpcPolicy::load(p)?,
        None => train_s2(cfg)?,
    };
    Ok(Models { gan, s1, s2 })
}
