use std::collections::BTreeMap;

use rand_distr::{Distribution, Exp};

use super::report::{CellSummary, DirectionalCheck, ExperimentKind, ExperimentReport, Regime, TwinningRecord};
use super::setup::{make_trial, Models, Trial};
use super::stats::{paired_t_test, spearman, summarize};
use super::{Deadline, ExperimentConfig};
use crate::dtconnect::{Collector, TwinningInterval};
use crate::error::{invalid, Error, Result};
use crate::netsim::{measure_kpis, rssi_matrix, MultiplierCurve, RadioConfig, Simulation, Topology, TrafficProfile};
use crate::par;
use crate::rng::{derive_seed, rng_from};
use crate::scenario::{day_curve, ScenarioKind, ScenarioSpec};
use crate::services::best_report;
use crate::twingraph::{TwinGraph, TwinSnapshot, TwinState};
use crate::whatif::{
    composite_score, evaluate_config, normalize_kpis, select_configs, EvalOptions, KpiBounds, NetworkModel, Origin,
    WeightProfile,
};

const TAG_PHYSICAL: u64 = 0xF1;
const TAG_SPIKES: u64 = 0x5F;

/// The day curve over the whole horizon times random load spikes of fixed
/// width, on top of the base profile.
pub fn physical_traffic(cfg: &ExperimentConfig, base: &TrafficProfile, seed: u64) -> Result<TrafficProfile> {
    let w = &cfg.twinning;
    let mut rng = rng_from(derive_seed(seed, &[TAG_SPIKES]));
    let gap = Exp::new(1.0 / w.spike_gap_s).map_err(|e| invalid(e.to_string()))?;
    let mut points = vec![(0.0, 1.0)];
    let mut t = gap.sample(&mut rng);
    while t < w.horizon_s {
        points.push((t, w.spike_factor));
        points.push((t + w.spike_width_s, 1.0));
        t += w.spike_width_s + gap.sample(&mut rng);
    }
    let spikes = MultiplierCurve::piecewise(points, None);
    let day = day_curve(cfg.scenario_params.day_curve, w.horizon_s);
    let mut out = base.clone();
    out.multiplier = base
        .multiplier
        .multiply(&day, w.horizon_s)
        .multiply(&spikes, w.horizon_s);
    out.multiplier.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Selection {
    config: RadioConfig,
    xi: f64,
    cleared: bool,
}

/// Picks a configuration for a load level by brute-force what-if analysis
/// on the twin's network model scaled to that level. Levels are quantized
/// and their selections cached.
pub struct LevelSelector<'a> {
    cfg: &'a ExperimentConfig,
    net: &'a NetworkModel,
    scenarios: Vec<ScenarioSpec>,
    opts: EvalOptions,
    seed: u64,
    base_bs_load: f64,
    cache: BTreeMap<usize, Selection>,
}

impl<'a> LevelSelector<'a> {
    pub fn new(cfg: &'a ExperimentConfig, trial: &'a Trial, regime: Regime) -> Self {
        let (scenarios, weights) = match regime {
            Regime::AOnly => (
                trial
                    .scenarios
                    .iter()
                    .filter(|s| s.kind == ScenarioKind::A)
                    .cloned()
                    .collect(),
                WeightProfile::a_only(cfg.weights.kpi),
            ),
            Regime::All => (trial.scenarios.clone(), cfg.weights),
        };
        Self {
            cfg,
            net: &trial.net,
            scenarios,
            opts: EvalOptions {
                sim: cfg.sim.clone(),
                weights,
                // trials already run in parallel
                mode: crate::par::ExecMode::Sequential,
                origin: Origin::Twin,
            },
            seed: trial.seed,
            base_bs_load: trial.net.traffic.total_offered_mbps() / trial.net.topology.bss.len() as f64,
            cache: BTreeMap::new(),
        }
    }

    /// Quantized load level of a snapshot, as a multiple of the step.
    pub fn level_of(&self, snap: &TwinSnapshot) -> usize {
        let loads: Vec<f64> = snap
            .nodes
            .iter()
            .filter(|n| !n.quarantined)
            .filter_map(|n| match n.state {
                TwinState::Bs { offered_load_mbps, .. } => Some(offered_load_mbps),
                _ => None,
            })
            .collect();
        let ratio = if loads.is_empty() || self.base_bs_load <= 0.0 {
            1.0
        } else {
            loads.iter().sum::<f64>() / loads.len() as f64 / self.base_bs_load
        };
        self.quantize(ratio)
    }

    fn quantize(&self, ratio: f64) -> usize {
        let w = &self.cfg.twinning;
        let top = (w.max_level / w.level_step).floor() as usize;
        ((ratio / w.level_step).round() as usize).clamp(1, top.max(1))
    }

    fn select(&mut self, level: usize) -> Result<Selection> {
        if let Some(s) = self.cache.get(&level) {
            return Ok(*s);
        }
        let mut net = self.net.clone();
        net.traffic.scale(level as f64 * self.cfg.twinning.level_step);
        let g = &self.cfg.grids;
        let configs: Vec<RadioConfig> = g
            .cst
            .iter()
            .flat_map(|&c| g.tpc.iter().map(move |&t| RadioConfig::new(c, t)))
            .collect();
        let reports: Vec<_> = configs
            .iter()
            .map(|c| evaluate_config(*c, &net, &self.scenarios, &self.opts, self.seed))
            .collect();
        let sel = match select_configs(&reports, self.cfg.twinning.threshold)?.first() {
            Some(r) => Selection {
                config: r.config,
                xi: r.xi,
                cleared: true,
            },
            None => {
                let b = best_report(&reports).ok_or_else(|| {
                    Error::Invariant(format!(
                        "no valid evaluation at load level {level}: {:?}",
                        reports.iter().find_map(|r| r.error.clone())
                    ))
                })?;
                Selection {
                    config: b.config,
                    xi: b.xi,
                    cleared: false,
                }
            }
        };
        self.cache.insert(level, sel);
        Ok(sel)
    }
}

fn coverage(topo: &Topology, radio: RadioConfig, sensitivity: f64) -> f64 {
    if topo.ues.is_empty() {
        return 1.0;
    }
    let t = topo.with_radio(radio);
    let m = rssi_matrix(&t);
    let covered = t
        .ues
        .iter()
        .enumerate()
        .filter(|(u, ue)| t.bs_index(ue.serving_bs).is_some_and(|b| m[b][*u] >= sensitivity))
        .count();
    covered as f64 / t.ues.len() as f64
}

/// Deploy to the physical twin and let the digital twin re-select the
/// configuration at every twinning interval. Returns the record of the run.
fn closed_loop(
    cfg: &ExperimentConfig,
    trial: &Trial,
    traffic: &TrafficProfile,
    selector: &mut LevelSelector,
    initial: RadioConfig,
    interval_s: f64,
    regime: Regime,
) -> Result<TwinningRecord> {
    let sim_cfg = &cfg.sim;
    let horizon = cfg.twinning.horizon_s;
    let topo = &trial.net.topology;
    let mut sim = Simulation::new(sim_cfg, topo, traffic, derive_seed(trial.seed, &[TAG_PHYSICAL]))?;
    sim.set_radio(initial)?;
    let mut collector = Collector::new(TwinningInterval {
        seconds: interval_s,
        sample_period: cfg.network.sample_period_s,
    })?;
    let mut graph = TwinGraph::default();
    let period = sim_cfg.slots_for_seconds(cfg.network.sample_period_s).max(1);
    let end = sim_cfg.slots_for_seconds(horizon);
    let mut current = initial;
    let mut segments = vec![(0.0, current)];
    let (mut decisions, mut switches) = (0, 0);
    while sim.now_slot() < end {
        let next = ((sim.now_slot() / period) + 1) * period;
        sim.run_until(next.min(end));
        let sample = sim.take_sample();
        if let Some(batch) = collector.push(&sample) {
            graph.apply_telemetry(&batch)?;
            let snap = graph.snapshot_retrospective()?;
            let sel = selector.select(selector.level_of(&snap))?;
            decisions += 1;
            if sel.config != current {
                sim.set_radio(sel.config)?;
                current = sel.config;
                switches += 1;
                segments.push((sim.now_s(), current));
            }
        }
    }
    let duration = sim.now_s();
    let result = sim.finish();
    let mut kpis = measure_kpis(&result, &topo.with_radio(current), sim_cfg.sensitivity_dbm)?;
    // coverage weighted by how long each configuration was live
    let mut c = 0.0;
    for (i, &(start, radio)) in segments.iter().enumerate() {
        let stop = segments.get(i + 1).map_or(duration, |s| s.0);
        c += (stop - start) / duration * coverage(topo, radio, sim_cfg.sensitivity_dbm);
    }
    kpis.c = c.clamp(0.0, 1.0);
    let bounds = KpiBounds::for_offered(traffic.mean_offered_over(horizon));
    let realized = composite_score(&normalize_kpis(&kpis, &bounds)?, &WeightProfile::a_only(cfg.weights.kpi))?;
    Ok(TwinningRecord {
        interval_s,
        regime,
        trial: trial.index,
        seed: trial.seed,
        decisions,
        switches,
        t_mbps: kpis.t,
        l_ms: kpis.l,
        pl: kpis.pl,
        c: kpis.c,
        realized_xi: realized,
    })
}

/// Both regimes over every interval for one trial.
pub fn run_twinning_trial(cfg: &ExperimentConfig, models: &Models, index: usize) -> Result<Vec<TwinningRecord>> {
    let trial = make_trial(cfg, &models.gan, cfg.twinning.size, index)?;
    let traffic = physical_traffic(cfg, &trial.net.traffic, trial.seed)?;
    let mut out = Vec::new();
    for regime in [Regime::AOnly, Regime::All] {
        let mut selector = LevelSelector::new(cfg, &trial, regime);
        let start = selector.quantize(1.0);
        let initial = selector.select(start)?;
        if !initial.cleared {
            return Err(Error::Invariant(format!(
                "trial {index}, regime {regime}: no configuration has ξ > {} (best ξ = {:.6} at {:?})",
                cfg.twinning.threshold, initial.xi, initial.config
            )));
        }
        for &interval in &cfg.twinning_intervals_s {
            out.push(closed_loop(cfg, &trial, &traffic, &mut selector, initial.config, interval, regime)?);
        }
    }
    Ok(out)
}

/// Realized ξ of twin-driven configuration under time-varying load, per
/// twinning interval and selection regime. Checks that all-scenario
/// selection beats scenario-A-only selection (paired over trials) and that
/// realized ξ falls as the interval grows (Spearman ρ over interval means).
pub fn run_twinning_experiment(cfg: &ExperimentConfig, models: &Models) -> Result<ExperimentReport> {
    cfg.validate()?;
    let deadline = Deadline::after(cfg.max_wall_s);
    let mut report = ExperimentReport::new(ExperimentKind::Twinning, cfg.master_seed);
    let rows = par::map_range(cfg.exec_mode, cfg.trials, |t| {
        if deadline.expired() {
            return Ok(None);
        }
        run_twinning_trial(cfg, models, t).map(Some)
    });
    for r in rows {
        match r? {
            Some(recs) => report.twinning.extend(recs),
            None => report.incomplete = true,
        }
    }
    for r in &report.twinning {
        if !(0.0..=1.0).contains(&r.realized_xi) {
            return Err(Error::Invariant(format!("realized ξ = {} outside [0, 1]", r.realized_xi)));
        }
    }

    let intervals = &cfg.twinning_intervals_s;
    let pick = |f: &dyn Fn(&TwinningRecord) -> bool| -> Vec<f64> {
        report.twinning.iter().filter(|r| f(r)).map(|r| r.realized_xi).collect()
    };
    for &i in intervals {
        for regime in [Regime::AOnly, Regime::All] {
            let xs = pick(&|r| r.interval_s == i && r.regime == regime);
            if !xs.is_empty() {
                report.cells.push(CellSummary {
                    size: Some(cfg.twinning.size),
                    mode: None,
                    interval_s: Some(i),
                    regime: Some(regime),
                    metric: "realized_xi".into(),
                    summary: summarize(&xs)?,
                });
            }
        }
    }

    // per-trial means over intervals, paired by trial
    let mut trials: Vec<usize> = report.twinning.iter().map(|r| r.trial).collect();
    trials.sort_unstable();
    trials.dedup();
    let trial_mean = |t: usize, regime: Regime| -> f64 {
        let xs = pick(&|r| r.trial == t && r.regime == regime);
        xs.iter().sum::<f64>() / xs.len().max(1) as f64
    };
    if trials.len() >= 2 {
        let all: Vec<f64> = trials.iter().map(|&t| trial_mean(t, Regime::All)).collect();
        let a: Vec<f64> = trials.iter().map(|&t| trial_mean(t, Regime::AOnly)).collect();
        let test = paired_t_test(&all, &a)?;
        report.checks.push(DirectionalCheck {
            name: "all-scenario > a-only".into(),
            statistic: test.t,
            p_value: Some(test.p_value),
            passed: test.p_value < super::experiments::ALPHA,
        });
    }
    if intervals.len() >= 2 && !report.twinning.is_empty() {
        let means: Vec<f64> = intervals
            .iter()
            .map(|&i| {
                let xs = pick(&|r| r.interval_s == i);
                xs.iter().sum::<f64>() / xs.len().max(1) as f64
            })
            .collect();
        let rho = spearman(intervals, &means)?;
        report.checks.push(DirectionalCheck {
            name: "realized ξ vs interval (spearman)".into(),
            statistic: rho,
            p_value: None,
            passed: rho <= -0.5,
        });
        for regime in [Regime::AOnly, Regime::All] {
            let means: Vec<f64> = intervals
                .iter()
                .map(|&i| {
                    let xs = pick(&|r| r.interval_s == i && r.regime == regime);
                    xs.iter().sum::<f64>() / xs.len().max(1) as f64
                })
                .collect();
            let rho = spearman(intervals, &means)?;
            report.checks.push(DirectionalCheck {
                name: format!("realized ξ vs interval, {regime} (spearman)"),
                statistic: rho,
                p_value: None,
                passed: rho <= -0.5,
            });
        }
    }
    Ok(report)
}
