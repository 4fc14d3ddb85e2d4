//! What-if analysis: KPI normalization, per-scenario composite scores,
//! the effectiveness score and configuration selection.

mod evaluate;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::KpiVector;

pub use evaluate::{
    evaluate_config, record_report, write_reports_csv, EffectivenessReport, EvalOptions, NetworkModel,
    Origin, ScenarioOutcome,
};

/// Normalized KPIs, all in [0, 1] and higher-is-better.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedKpis {
    pub m_t: f64,
    pub m_l: f64,
    pub m_pl: f64,
    pub m_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiWeights {
    pub t: f64,
    pub l: f64,
    pub pl: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightProfile {
    pub kpi: KpiWeights,
    pub scenario: ScenarioWeights,
}

impl Default for WeightProfile {
    fn default() -> Self {
        Self {
            kpi: KpiWeights {
                t: 0.4,
                l: 0.2,
                pl: 0.2,
                c: 0.2,
            },
            scenario: ScenarioWeights {
                a: 0.4,
                b: 0.2,
                c: 0.2,
                d: 0.2,
            },
        }
    }
}

fn check_group(name: &str, w: [f64; 4]) -> Result<()> {
    if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(invalid(format!("{name} weights must be non-negative")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{name} weights sum to {s}, not 1")));
    }
    Ok(())
}

impl WeightProfile {
    /// Only the current-behaviour scenario counts.
    pub fn a_only(kpi: KpiWeights) -> Self {
        Self {
            kpi,
            scenario: ScenarioWeights {
                a: 1.0,
                b: 0.0,
                c: 0.0,
                d: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.kpi;
        let s = self.scenario;
        check_group("KPI", [k.t, k.l, k.pl, k.c])?;
        check_group("scenario", [s.a, s.b, s.c, s.d])
    }
}

/// Reference ranges for throughput (Mbps) and latency (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiBounds {
    pub t_min: f64,
    pub t_max: f64,
    pub l_min: f64,
    pub l_max: f64,
}

pub const DEFAULT_LATENCY_MAX_MS: f64 = 100.0;

impl KpiBounds {
    pub fn for_offered(offered_mbps: f64) -> Self {
        Self {
            t_min: 0.0,
            t_max: offered_mbps,
            l_min: 0.0,
            l_max: DEFAULT_LATENCY_MAX_MS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max && self.l_min < self.l_max) {
            return Err(invalid(format!("inverted or empty KPI bounds: {self:?}")));
        }
        Ok(())
    }
}

pub fn normalize_kpis(k: &KpiVector, b: &KpiBounds) -> Result<NormalizedKpis> {
    b.validate()?;
    k.validate()?;
    let lin = |x: f64, lo: f64, hi: f64| ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
    Ok(NormalizedKpis {
        m_t: lin(k.t, b.t_min, b.t_max),
        m_l: 1.0 - lin(k.l, b.l_min, b.l_max),
        m_pl: 1.0 - k.pl,
        m_c: k.c,
    })
}

pub fn composite_score(m: &NormalizedKpis, w: &WeightProfile) -> Result<f64> {
    w.validate()?;
    let k = w.kpi;
    Ok(k.t * m.m_t + k.l * m.m_l + k.pl * m.m_pl + k.c * m.m_c)
}

/// Composite scores of the four scenario groups; C is the mean of its
/// sub-scenarios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScores {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub d: Option<f64>,
}

/// Scenario-weighted sum of composite scores. A group may be missing only
/// when its weight is zero.
pub fn effectiveness(cs: &ScenarioScores, w: &WeightProfile) -> Result<f64> {
    w.validate()?;
    let s = w.scenario;
    let mut xi = 0.0;
    for (name, score, weight) in [("A", cs.a, s.a), ("B", cs.b, s.b), ("C", cs.c, s.c), ("D", cs.d, s.d)] {
        match score {
            Some(v) if (0.0..=1.0).contains(&v) => xi += weight * v,
            Some(v) => return Err(invalid(format!("CS_{name} = {v} outside [0, 1]"))),
            None if weight == 0.0 => {}
            None => return Err(invalid(format!("missing score for scenario {name}"))),
        }
    }
    Ok(xi)
}

/// Reports with ξ strictly above `threshold`, best first. Ties go to the
/// lower transmit power, then the lower |CST|.
pub fn select_configs(reports: &[EffectivenessReport], threshold: f64) -> Result<Vec<&EffectivenessReport>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(invalid(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut out: Vec<&EffectivenessReport> = reports
        .iter()
        .filter(|r| r.valid && r.xi > threshold)
        .collect();
    out.sort_by(|a, b| {
        b.xi.total_cmp(&a.xi)
            .then(a.config.tpc_dbm.total_cmp(&b.config.tpc_dbm))
            .then(a.config.cst_dbm.abs().total_cmp(&b.config.cst_dbm.abs()))
    });
    Ok(out)
}

#[cfg(test)]
mod tests;
