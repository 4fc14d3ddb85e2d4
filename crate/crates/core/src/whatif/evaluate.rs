use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{composite_score, effectiveness, normalize_kpis, KpiBounds, ScenarioScores, WeightProfile};
use crate::error::{invalid, Result};
use crate::netsim::{measure_kpis, KpiVector, RadioConfig, SimConfig, Simulation, Topology, TrafficProfile};
use crate::par::{self, ExecMode};
use crate::report::{round6, sig6};
use crate::rng::derive_seed;
use crate::scenario::{flatten_scenario, ScenarioKind, ScenarioSpec};
use crate::twingraph::{ProspectiveTwin, TwinGraph};

/// The network as the twin sees it: topology plus the traffic model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub topology: Topology,
    pub traffic: TrafficProfile,
}

/// Which layer produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Twin,
    Physical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub kind: ScenarioKind,
    pub seed: u64,
    pub kpis: KpiVector,
    pub bounds: KpiBounds,
    pub cs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectivenessReport {
    pub config: RadioConfig,
    pub outcomes: Vec<ScenarioOutcome>,
    pub cs_a: Option<f64>,
    pub cs_b: Option<f64>,
    pub cs_c: Option<f64>,
    pub cs_d: Option<f64>,
    pub xi: f64,
    pub valid: bool,
    pub error: Option<String>,
    pub origin: Origin,
}

impl EffectivenessReport {
    fn invalid(config: RadioConfig, origin: Origin, cause: String) -> Self {
        Self {
            config,
            outcomes: Vec::new(),
            cs_a: None,
            cs_b: None,
            cs_c: None,
            cs_d: None,
            xi: 0.0,
            valid: false,
            error: Some(cause),
            origin,
        }
    }

    pub fn scores(&self) -> ScenarioScores {
        ScenarioScores {
            a: self.cs_a,
            b: self.cs_b,
            c: self.cs_c,
            d: self.cs_d,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.outcomes.iter().map(|o| o.seed).collect()
    }

    /// JSON with floats rounded to 6 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut r = self.clone();
        let opt = |v: Option<f64>| v.map(round6);
        r.cs_a = opt(r.cs_a);
        r.cs_b = opt(r.cs_b);
        r.cs_c = opt(r.cs_c);
        r.cs_d = opt(r.cs_d);
        r.xi = round6(r.xi);
        for o in &mut r.outcomes {
            o.cs = round6(o.cs);
            o.kpis = KpiVector {
                t: round6(o.kpis.t),
                l: round6(o.kpis.l),
                pl: round6(o.kpis.pl),
                c: round6(o.kpis.c),
            };
            o.bounds.t_max = round6(o.bounds.t_max);
        }
        Ok(serde_json::to_string_pretty(&r)?)
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub sim: SimConfig,
    pub weights: WeightProfile,
    pub mode: ExecMode,
    pub origin: Origin,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            weights: WeightProfile::default(),
            mode: ExecMode::default(),
            origin: Origin::Twin,
        }
    }
}

fn run_scenario(
    config: RadioConfig,
    net: &NetworkModel,
    spec: &ScenarioSpec,
    opts: &EvalOptions,
    seed: u64,
) -> Result<ScenarioOutcome> {
    let (topo, traffic) = flatten_scenario(spec, &net.topology, &net.traffic)?;
    let slots = opts.sim.slots_for_seconds(spec.duration_s);
    if slots == 0 {
        return Err(invalid("scenario shorter than one slot"));
    }
    let mut sim = Simulation::new(&opts.sim, &topo, &traffic, seed)?;
    sim.set_radio(config)?;
    sim.run_until(slots);
    let result = sim.finish();
    let mut topo = topo;
    for bs in &mut topo.bss {
        bs.radio = config;
    }
    let kpis = measure_kpis(&result, &topo, opts.sim.sensitivity_dbm)?;
    let bounds = KpiBounds::for_offered(traffic.mean_offered_over(spec.duration_s));
    let cs = composite_score(&normalize_kpis(&kpis, &bounds)?, &opts.weights)?;
    Ok(ScenarioOutcome {
        scenario_id: spec.id.clone(),
        kind: spec.kind,
        seed,
        kpis,
        bounds,
        cs,
    })
}

/// Score one radio configuration against a set of scenarios. Every
/// scenario runs with a seed derived from `seed` and its kind, so two
/// configurations see the same random draws. Failures yield an invalid
/// report carrying the cause.
pub fn evaluate_config(
    config: RadioConfig,
    net: &NetworkModel,
    scenarios: &[ScenarioSpec],
    opts: &EvalOptions,
    seed: u64,
) -> EffectivenessReport {
    match evaluate_inner(config, net, scenarios, opts, seed) {
        Ok(r) => r,
        Err(e) => EffectivenessReport::invalid(config, opts.origin, e.to_string()),
    }
}

fn evaluate_inner(
    config: RadioConfig,
    net: &NetworkModel,
    scenarios: &[ScenarioSpec],
    opts: &EvalOptions,
    seed: u64,
) -> Result<EffectivenessReport> {
    opts.weights.validate()?;
    config.validate()?;
    for (i, s) in scenarios.iter().enumerate() {
        if scenarios[..i].iter().any(|p| p.kind == s.kind) {
            return Err(invalid(format!("scenario kind {} listed twice", s.kind.name())));
        }
    }
    let mut ordered: Vec<&ScenarioSpec> = scenarios.iter().collect();
    ordered.sort_by_key(|s| s.kind);
    let results = par::map(opts.mode, &ordered, |s| {
        let sd = derive_seed(seed, &[s.kind as u64]);
        run_scenario(config, net, s, opts, sd)
    });
    let outcomes = results.into_iter().collect::<Result<Vec<_>>>()?;

    let cs_of = |k: ScenarioKind| outcomes.iter().find(|o| o.kind == k).map(|o| o.cs);
    let c_parts: Vec<f64> = [ScenarioKind::C1, ScenarioKind::C2, ScenarioKind::C3]
        .into_iter()
        .filter_map(cs_of)
        .collect();
    let cs_c = (!c_parts.is_empty()).then(|| c_parts.iter().sum::<f64>() / c_parts.len() as f64);
    let scores = ScenarioScores {
        a: cs_of(ScenarioKind::A),
        b: cs_of(ScenarioKind::B),
        c: cs_c,
        d: cs_of(ScenarioKind::D),
    };
    let xi = effectiveness(&scores, &opts.weights)?;
    Ok(EffectivenessReport {
        config,
        outcomes,
        cs_a: scores.a,
        cs_b: scores.b,
        cs_c: scores.c,
        cs_d: scores.d,
        xi,
        valid: true,
        error: None,
        origin: opts.origin,
    })
}

/// Store every scenario outcome of a valid report as a prospective twin.
pub fn record_report(graph: &mut TwinGraph, report: &EffectivenessReport, gan_model_id: Option<&str>) -> Result<Vec<u64>> {
    if !report.valid {
        return Err(invalid("cannot record an invalid report"));
    }
    let mut ids = Vec::new();
    for o in &report.outcomes {
        if !graph.has_scenario(&o.scenario_id) {
            graph.register_scenario(o.scenario_id.clone());
        }
        ids.push(graph.record_prospective(ProspectiveTwin {
            scenario_id: o.scenario_id.clone(),
            config: report.config,
            predicted: vec![(o.kind.name().to_string(), o.kpis)],
            seed: o.seed,
            gan_model_id: gan_model_id.map(str::to_string),
        })?);
    }
    Ok(ids)
}

pub fn write_reports_csv<W: Write>(reports: &[EffectivenessReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin", "cst_dbm", "tpc_dbm", "cs_a", "cs_b", "cs_c", "cs_d", "xi", "valid", "error"])?;
    let opt = |v: Option<f64>| v.map(sig6).unwrap_or_default();
    for r in reports {
        let origin = match r.origin {
            Origin::Twin => "twin",
            Origin::Physical => "physical",
        };
        w.write_record([
            origin.to_string(),
            sig6(r.config.cst_dbm),
            sig6(r.config.tpc_dbm),
            opt(r.cs_a),
            opt(r.cs_b),
            opt(r.cs_c),
            opt(r.cs_d),
            sig6(r.xi),
            r.valid.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
