use std::collections::HashMap;

use super::report::{CellSummary, DirectionalCheck, ExperimentKind, ExperimentReport, ScalingRecord, StrategyRecord};
use super::setup::{make_trial, Models, Trial};
use super::stats::{paired_t_test, summarize};
use super::twinning::run_twinning_experiment;
use super::{Deadline, ExperimentConfig};
use crate::error::{Error, Result};
use crate::par;
use crate::services::{best_report, candidate_configs, run_strategy, StrategyInput, StrategyMode};
use crate::whatif::{evaluate_config, EffectivenessReport, EvalOptions, Origin};

/// One-sided significance level of the directional checks.
pub const ALPHA: f64 = 0.05;

/// Evaluation options on the twin side for `cfg`.
pub fn eval_options(cfg: &ExperimentConfig) -> EvalOptions {
    EvalOptions {
        sim: cfg.sim.clone(),
        weights: cfg.weights,
        mode: cfg.exec_mode,
        origin: Origin::Twin,
    }
}

pub fn strategy_input<'a>(cfg: &'a ExperimentConfig, trial: &'a Trial, models: &'a Models, o: &'a EvalOptions) -> StrategyInput<'a> {
    StrategyInput {
        snapshot: &trial.snapshot,
        net: &trial.net,
        scenarios: &trial.scenarios,
        opts: o,
        grids: &cfg.grids,
        s1: Some(&models.s1),
        s2: Some(&models.s2),
        seed: trial.seed,
    }
}

pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig, models: &Models) -> Result<ExperimentReport> {
    match kind {
        ExperimentKind::Scaling => run_scaling_experiment(cfg, models),
        ExperimentKind::Strategy => run_strategy_experiment(cfg, models),
        ExperimentKind::Twinning => run_twinning_experiment(cfg, models),
    }
}

/// Wall time and evaluation count of every mode, size and trial. Trials run
/// one after another so timings do not compete for cores.
pub fn run_scaling_experiment(cfg: &ExperimentConfig, models: &Models) -> Result<ExperimentReport> {
    cfg.validate()?;
    let deadline = Deadline::after(cfg.max_wall_s);
    let o = eval_options(cfg);
    let mut report = ExperimentReport::new(ExperimentKind::Scaling, cfg.master_seed);
    'outer: for &size in &cfg.sizes {
        for t in 0..cfg.trials {
            if deadline.expired() {
                report.incomplete = true;
                break 'outer;
            }
            let trial = make_trial(cfg, &models.gan, size, t)?;
            let inp = strategy_input(cfg, &trial, models, &o);
            for &mode in &cfg.modes {
                let out = run_strategy(mode, &inp)?;
                report.scaling.push(ScalingRecord {
                    size,
                    mode,
                    trial: t,
                    seed: trial.seed,
                    evaluations: out.evaluations,
                    wall_time_s: out.wall_time_s,
                    xi: out.best.xi,
                });
            }
        }
    }
    for &size in &cfg.sizes {
        for &mode in &cfg.modes {
            let xs: Vec<f64> = report
                .scaling
                .iter()
                .filter(|r| r.size == size && r.mode == mode)
                .map(|r| r.wall_time_s)
                .collect();
            if xs.is_empty() {
                continue;
            }
            report.cells.push(CellSummary {
                size: Some(size),
                mode: Some(mode),
                interval_s: None,
                regime: None,
                metric: "wall_time_s".into(),
                summary: summarize(&xs)?,
            });
        }
    }
    Ok(report)
}

/// Best report of every mode for one trial. Evaluations are deterministic
/// in (configuration, trial), so each distinct configuration is simulated
/// once and shared between modes.
pub fn strategy_trial(cfg: &ExperimentConfig, trial: &Trial, models: &Models) -> Result<Vec<(StrategyMode, usize, EffectivenessReport)>> {
    let o = eval_options(cfg);
    let inp = strategy_input(cfg, trial, models, &o);
    let mut per_mode = Vec::new();
    let mut wanted = Vec::new();
    for &mode in &cfg.modes {
        let configs = candidate_configs(mode, &inp)?;
        for c in &configs {
            if !wanted.contains(c) {
                wanted.push(*c);
            }
        }
        per_mode.push((mode, configs));
    }
    let reports = par::map(cfg.exec_mode, &wanted, |c| evaluate_config(*c, &trial.net, &trial.scenarios, &o, trial.seed));
    let key = |c: &crate::netsim::RadioConfig| (c.cst_dbm.to_bits(), c.tpc_dbm.to_bits());
    let cache: HashMap<_, _> = wanted.iter().map(key).zip(reports).collect();
    per_mode
        .into_iter()
        .map(|(mode, configs)| {
            let reports: Vec<EffectivenessReport> = configs.iter().map(|c| cache[&key(c)].clone()).collect();
            let best = best_report(&reports)
                .cloned()
                .ok_or_else(|| Error::Invariant(format!("mode {mode}: no valid evaluation")))?;
            Ok((mode, configs.len(), best))
        })
        .collect()
}

/// Distribution of the best ξ per size and mode, plus the directional
/// checks: brute force dominates every mode in every trial, and the
/// independent combination scores below each cross-evaluated mode.
pub fn run_strategy_experiment(cfg: &ExperimentConfig, models: &Models) -> Result<ExperimentReport> {
    cfg.validate()?;
    let deadline = Deadline::after(cfg.max_wall_s);
    let mut report = ExperimentReport::new(ExperimentKind::Strategy, cfg.master_seed);
    for &size in &cfg.sizes {
        let rows = par::map_range(cfg.exec_mode, cfg.trials, |t| -> Result<Option<Vec<StrategyRecord>>> {
            if deadline.expired() {
                return Ok(None);
            }
            let trial = make_trial(cfg, &models.gan, size, t)?;
            let out = strategy_trial(cfg, &trial, models)?;
            Ok(Some(
                out.into_iter()
                    .map(|(mode, evaluations, best)| StrategyRecord {
                        size,
                        mode,
                        trial: t,
                        seed: trial.seed,
                        evaluations,
                        cst_dbm: best.config.cst_dbm,
                        tpc_dbm: best.config.tpc_dbm,
                        cs_a: best.cs_a,
                        cs_b: best.cs_b,
                        cs_c: best.cs_c,
                        cs_d: best.cs_d,
                        xi: best.xi,
                    })
                    .collect(),
            ))
        });
        for r in rows {
            match r? {
                Some(recs) => report.strategy.extend(recs),
                None => report.incomplete = true,
            }
        }
    }

    for r in &report.strategy {
        if !(0.0..=1.0).contains(&r.xi) {
            return Err(Error::Invariant(format!("ξ = {} outside [0, 1]", r.xi)));
        }
    }
    let xi_of = |size: usize, mode: StrategyMode| -> Vec<(usize, f64)> {
        report
            .strategy
            .iter()
            .filter(|r| r.size == size && r.mode == mode)
            .map(|r| (r.trial, r.xi))
            .collect()
    };
    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for &size in &cfg.sizes {
        for &mode in &cfg.modes {
            let xs: Vec<f64> = xi_of(size, mode).into_iter().map(|(_, x)| x).collect();
            if !xs.is_empty() {
                cells.push(CellSummary {
                    size: Some(size),
                    mode: Some(mode),
                    interval_s: None,
                    regime: None,
                    metric: "xi".into(),
                    summary: summarize(&xs)?,
                });
            }
        }
        if cfg.modes.contains(&StrategyMode::BruteForce) {
            let brute: HashMap<usize, f64> = xi_of(size, StrategyMode::BruteForce).into_iter().collect();
            for r in report.strategy.iter().filter(|r| r.size == size) {
                if let Some(&b) = brute.get(&r.trial) {
                    if r.xi > b {
                        return Err(Error::Invariant(format!(
                            "{} beats brute force at size {size}, trial {}: {} > {b}",
                            r.mode, r.trial, r.xi
                        )));
                    }
                }
            }
        }
        let ind = xi_of(size, StrategyMode::S1AndS2Independent);
        for other in [StrategyMode::S1CrossS2, StrategyMode::S2CrossS1] {
            let o = xi_of(size, other);
            if ind.len() < 2 || o.len() != ind.len() {
                continue;
            }
            let a: Vec<f64> = o.iter().map(|p| p.1).collect();
            let b: Vec<f64> = ind.iter().map(|p| p.1).collect();
            let test = paired_t_test(&a, &b)?;
            checks.push(DirectionalCheck {
                name: format!("size-{size}: {other} > independent"),
                statistic: test.t,
                p_value: Some(test.p_value),
                passed: test.p_value < ALPHA,
            });
        }
    }
    report.cells = cells;
    report.checks = checks;
    Ok(report)
}
