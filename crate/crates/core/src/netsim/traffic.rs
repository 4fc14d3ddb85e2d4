use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::topology::Topology;
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficType {
    #[serde(rename = "CBR")]
    Cbr,
    #[serde(rename = "HTTP")]
    Http,
    #[serde(rename = "Video")]
    Video,
}

impl TrafficType {
    pub const ALL: [TrafficType; 3] = [TrafficType::Cbr, TrafficType::Http, TrafficType::Video];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TrafficType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrafficType::Cbr => "CBR",
            TrafficType::Http => "HTTP",
            TrafficType::Video => "Video",
        })
    }
}

/// One downlink flow towards a UE, active over `[start_s, stop_s)`. Delayed
/// starts are how scenario-injected users join mid-run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub ue_id: u32,
    pub traffic_type: TrafficType,
    pub offered_rate_mbps: f64,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_s: Option<f64>,
}

impl Flow {
    pub fn new(ue_id: u32, traffic_type: TrafficType, offered_rate_mbps: f64) -> Self {
        Self {
            ue_id,
            traffic_type,
            offered_rate_mbps,
            start_s: 0.0,
            stop_s: None,
        }
    }

    pub fn is_active_at(&self, t_s: f64) -> bool {
        t_s >= self.start_s && self.stop_s.is_none_or(|e| t_s < e)
    }
}

/// Shape parameters of the bursty sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnOffParams {
    /// Mean ON period of HTTP sources (Pareto distributed), seconds.
    pub http_on_mean_s: f64,
    pub http_pareto_shape: f64,
    /// Mean OFF period of HTTP sources (exponential), seconds.
    pub http_off_mean_s: f64,
    pub video_fps: f64,
}

impl Default for OnOffParams {
    fn default() -> Self {
        Self {
            http_on_mean_s: 0.05,
            http_pareto_shape: 1.5,
            http_off_mean_s: 0.05,
            video_fps: 30.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub at_s: f64,
    pub value: f64,
}

/// Piecewise-constant load multiplier over simulated time, optionally
/// periodic. Each point holds until the next one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierCurve {
    pub points: Vec<CurvePoint>,
    #[serde(default)]
    pub period_s: Option<f64>,
}

impl Default for MultiplierCurve {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl MultiplierCurve {
    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![CurvePoint { at_s: 0.0, value }],
            period_s: None,
        }
    }

    pub fn piecewise(points: Vec<(f64, f64)>, period_s: Option<f64>) -> Self {
        Self {
            points: points
                .into_iter()
                .map(|(at_s, value)| CurvePoint { at_s, value })
                .collect(),
            period_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() {
            return Err(invalid("multiplier curve has no points"));
        }
        if self.points.iter().any(|p| !(p.value.is_finite() && p.value >= 0.0)) {
            return Err(invalid("multiplier values must be finite and non-negative"));
        }
        if self.points.windows(2).any(|w| w[1].at_s < w[0].at_s) {
            return Err(invalid("multiplier points must be sorted by time"));
        }
        if let Some(p) = self.period_s {
            if !(p > 0.0) {
                return Err(invalid("multiplier period must be positive"));
            }
        }
        Ok(())
    }

    pub fn value_at(&self, t_s: f64) -> f64 {
        let t = match self.period_s {
            Some(p) => t_s.rem_euclid(p),
            None => t_s,
        };
        let mut v = self.points.first().map_or(1.0, |p| p.value);
        for p in &self.points {
            if p.at_s <= t {
                v = p.value;
            } else {
                break;
            }
        }
        v
    }

    /// Time of the next breakpoint strictly after `t_s`, if any.
    pub fn next_change_after(&self, t_s: f64) -> Option<f64> {
        match self.period_s {
            None => self.points.iter().map(|p| p.at_s).find(|&a| a > t_s),
            Some(p) => {
                let base = (t_s / p).floor() * p;
                let local = t_s - base;
                self.points
                    .iter()
                    .map(|q| q.at_s)
                    .find(|&a| a > local)
                    .map(|a| base + a)
                    .or_else(|| self.points.first().map(|q| base + p + q.at_s))
            }
        }
    }

    /// Time-average over `[0, horizon_s]`, evaluated exactly on breakpoints.
    pub fn mean_over(&self, horizon_s: f64) -> f64 {
        if horizon_s <= 0.0 {
            return self.value_at(0.0);
        }
        let mut t = 0.0;
        let mut acc = 0.0;
        while t < horizon_s {
            let next = self.next_change_after(t).unwrap_or(horizon_s).min(horizon_s);
            acc += self.value_at(t) * (next - t);
            t = next;
        }
        acc / horizon_s
    }

    /// Pointwise product with another curve (both sampled on the union of
    /// breakpoints within `horizon_s`). The result is aperiodic.
    pub fn multiply(&self, other: &MultiplierCurve, horizon_s: f64) -> MultiplierCurve {
        let mut cuts = vec![0.0];
        for c in [self, other] {
            let mut t = 0.0;
            while let Some(n) = c.next_change_after(t) {
                if n >= horizon_s {
                    break;
                }
                cuts.push(n);
                t = n;
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        MultiplierCurve::piecewise(
            cuts.into_iter()
                .map(|t| (t, self.value_at(t) * other.value_at(t)))
                .collect(),
            None,
        )
    }
}

/// Relative share of each traffic type when flows are assigned to UEs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficMix {
    pub cbr: f64,
    pub http: f64,
    pub video: f64,
}

impl Default for TrafficMix {
    fn default() -> Self {
        Self {
            cbr: 1.0,
            http: 1.0,
            video: 1.0,
        }
    }
}

impl TrafficMix {
    fn pick(&self, u: f64) -> TrafficType {
        let total = self.cbr + self.http + self.video;
        let x = u * total;
        if x < self.cbr {
            TrafficType::Cbr
        } else if x < self.cbr + self.http {
            TrafficType::Http
        } else {
            TrafficType::Video
        }
    }
}

/// Offered downlink traffic for a topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficProfile {
    pub flows: Vec<Flow>,
    pub target_per_bss_mbps: f64,
    #[serde(default)]
    pub onoff: OnOffParams,
    #[serde(default)]
    pub multiplier: MultiplierCurve,
}

pub const DEFAULT_TARGET_PER_BSS_MBPS: f64 = 100.0;

impl TrafficProfile {
    pub fn empty() -> Self {
        Self {
            flows: Vec::new(),
            target_per_bss_mbps: 0.0,
            onoff: OnOffParams::default(),
            multiplier: MultiplierCurve::default(),
        }
    }

    /// Split `target_per_bss_mbps` evenly over each BSS's UEs, one flow per UE,
    /// with traffic types drawn from `mix`.
    pub fn for_topology(
        topology: &Topology,
        target_per_bss_mbps: f64,
        mix: &TrafficMix,
        seed: u64,
    ) -> Result<Self> {
        if !(target_per_bss_mbps.is_finite() && target_per_bss_mbps >= 0.0) {
            return Err(invalid("per-BSS target must be non-negative"));
        }
        let mut rng = rng_from(derive_seed(seed, &[0x7AFF]));
        let mut flows = Vec::with_capacity(topology.ues.len());
        for bs in &topology.bss {
            let ues: Vec<_> = topology.ues_of(bs.id).collect();
            if ues.is_empty() {
                continue;
            }
            let per_ue = target_per_bss_mbps / ues.len() as f64;
            for ue in ues {
                flows.push(Flow::new(ue.id, mix.pick(rng.random()), per_ue));
            }
        }
        Ok(Self {
            flows,
            target_per_bss_mbps,
            onoff: OnOffParams::default(),
            multiplier: MultiplierCurve::default(),
        })
    }

    pub fn for_topology_default(topology: &Topology, seed: u64) -> Result<Self> {
        Self::for_topology(topology, DEFAULT_TARGET_PER_BSS_MBPS, &TrafficMix::default(), seed)
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        for f in &self.flows {
            if topology.ue_index(f.ue_id).is_none() {
                return Err(invalid(format!("flow references unknown UE {}", f.ue_id)));
            }
            if !(f.offered_rate_mbps.is_finite() && f.offered_rate_mbps >= 0.0) {
                return Err(invalid(format!("flow rate for UE {} is invalid", f.ue_id)));
            }
            if !(f.start_s.is_finite() && f.start_s >= 0.0) {
                return Err(invalid(format!("flow start for UE {} is invalid", f.ue_id)));
            }
            if f.stop_s.is_some_and(|e| !(e >= f.start_s)) {
                return Err(invalid(format!("flow stop for UE {} precedes its start", f.ue_id)));
            }
        }
        self.multiplier.validate()
    }

    /// Offered load per BSS (Mbps) at multiplier 1.0, counting every flow.
    pub fn offered_per_bss(&self, topology: &Topology) -> BTreeMap<u32, f64> {
        let mut out: BTreeMap<u32, f64> = topology.bss.iter().map(|b| (b.id, 0.0)).collect();
        for f in &self.flows {
            if let Some(i) = topology.ue_index(f.ue_id) {
                *out.entry(topology.ues[i].serving_bs).or_default() += f.offered_rate_mbps;
            }
        }
        out
    }

    pub fn total_offered_mbps(&self) -> f64 {
        self.flows.iter().map(|f| f.offered_rate_mbps).sum()
    }

    /// Offered load (Mbps) at time `t_s`, including the multiplier.
    pub fn offered_at(&self, t_s: f64) -> f64 {
        let base: f64 = self
            .flows
            .iter()
            .filter(|f| f.is_active_at(t_s))
            .map(|f| f.offered_rate_mbps)
            .sum();
        base * self.multiplier.value_at(t_s)
    }

    /// Time-averaged offered load over `[0, horizon_s]`, integrated exactly
    /// over flow windows and multiplier breakpoints.
    pub fn mean_offered_over(&self, horizon_s: f64) -> f64 {
        if horizon_s <= 0.0 {
            return self.offered_at(0.0);
        }
        let mut cuts = vec![0.0, horizon_s];
        for f in &self.flows {
            cuts.push(f.start_s);
            if let Some(e) = f.stop_s {
                cuts.push(e);
            }
        }
        let mut t = 0.0;
        while let Some(n) = self.multiplier.next_change_after(t) {
            if n >= horizon_s {
                break;
            }
            cuts.push(n);
            t = n;
        }
        cuts.retain(|c| (0.0..=horizon_s).contains(c));
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let area: f64 = cuts
            .windows(2)
            .map(|w| self.offered_at(w[0]) * (w[1] - w[0]))
            .sum();
        area / horizon_s
    }

    pub fn scale(&mut self, factor: f64) {
        for f in &mut self.flows {
            f.offered_rate_mbps *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::topology::build_topology;

    #[test]
    fn aggregate_per_bss_matches_target() {
        let t = build_topology(9, (10, 15), 40.0, 4).unwrap();
        let p = TrafficProfile::for_topology_default(&t, 4).unwrap();
        for (_, load) in p.offered_per_bss(&t) {
            assert!((load - 100.0).abs() <= 1.0, "load {load}");
        }
        p.validate(&t).unwrap();
    }

    #[test]
    fn curve_lookup_and_mean() {
        let c = MultiplierCurve::piecewise(vec![(0.0, 0.3), (1.0, 0.8), (2.0, 1.0), (3.0, 1.4)], Some(4.0));
        assert_eq!(c.value_at(0.5), 0.3);
        assert_eq!(c.value_at(3.5), 1.4);
        assert_eq!(c.value_at(4.2), 0.3);
        assert!((c.mean_over(4.0) - 0.875).abs() < 1e-12);
        assert!((c.mean_over(8.0) - 0.875).abs() < 1e-12);
        assert_eq!(c.next_change_after(3.5), Some(4.0));
    }

    #[test]
    fn curve_product() {
        let a = MultiplierCurve::piecewise(vec![(0.0, 1.0), (2.0, 2.0)], None);
        let b = MultiplierCurve::piecewise(vec![(0.0, 0.5), (1.0, 1.0)], Some(2.0));
        let p = a.multiply(&b, 4.0);
        assert_eq!(p.value_at(0.5), 0.5);
        assert_eq!(p.value_at(1.5), 1.0);
        assert_eq!(p.value_at(2.5), 1.0);
        assert_eq!(p.value_at(3.5), 2.0);
    }

    #[test]
    fn json_uses_table_names() {
        let s = serde_json::to_string(&TrafficType::Video).unwrap();
        assert_eq!(s, "\"Video\"");
        let t: TrafficType = serde_json::from_str("\"CBR\"").unwrap();
        assert_eq!(t, TrafficType::Cbr);
    }
}
