//! Scenario maker: turns a twin snapshot plus GAN output into concrete
//! what-if timelines and expands them into simulator inputs.

mod expand;

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::{MultiplierCurve, TrafficType};
use crate::rng::{derive_seed, rng_from};
use crate::tabgan::{generate_flows, FlowRecord, GanModel, HourBucket};
use crate::twingraph::{NodeKind, TwinSnapshot};

pub use expand::{apply_scenario, flatten_scenario, ScenarioStep};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    A,
    B,
    C1,
    C2,
    C3,
    D,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::A,
        ScenarioKind::B,
        ScenarioKind::C1,
        ScenarioKind::C2,
        ScenarioKind::C3,
        ScenarioKind::D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::A => "A",
            ScenarioKind::B => "B",
            ScenarioKind::C1 => "C1",
            ScenarioKind::C2 => "C2",
            ScenarioKind::C3 => "C3",
            ScenarioKind::D => "D",
        }
    }

    pub fn needs_gan(self) -> bool {
        matches!(self, ScenarioKind::B | ScenarioKind::C3 | ScenarioKind::D)
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown scenario kind {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScenarioEvent {
    /// Join a synthetic user. Without `target_bs` it attaches to the
    /// least-loaded BS.
    AddUe {
        record: FlowRecord,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target_bs: Option<u32>,
    },
    ScaleTraffic { factor: f64 },
    SetMultiplierCurve { curve: MultiplierCurve },
    /// From this time on, flows take these traffic types in UE order
    /// (cycled); rates are unchanged.
    RedrawMix { traffic_types: Vec<TrafficType> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub t_s: f64,
    #[serde(flatten)]
    pub event: ScenarioEvent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub kind: ScenarioKind,
    /// Timestamp and content hash of the snapshot the scenario starts from.
    pub base_timestamp: f64,
    pub base_hash: String,
    /// UE count of the base snapshot.
    pub base_ues: usize,
    pub timeline: Vec<TimedEvent>,
    pub duration_s: f64,
    pub seed: u64,
    pub gan_model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub duration_s: f64,
    /// Share of the base population B and D add.
    pub growth: f64,
    pub c1_factor: f64,
    pub c2_factor: f64,
    /// Night, morning, day, evening multipliers of C3.
    pub day_curve: [f64; 4],
    pub spike_factor: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            duration_s: 2.0,
            growth: 0.5,
            c1_factor: 1.2,
            c2_factor: 1.4,
            day_curve: [0.3, 0.8, 1.0, 1.4],
            spike_factor: 2.0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("scenario duration must be positive"));
        }
        if !(self.growth >= 0.0 && self.c1_factor > 0.0 && self.c2_factor > 0.0 && self.spike_factor > 0.0) {
            return Err(invalid("scenario factors must be positive"));
        }
        if self.day_curve.iter().any(|v| !(*v >= 0.0)) {
            return Err(invalid("day curve must be non-negative"));
        }
        Ok(())
    }

    pub fn added_users(&self, base: usize) -> usize {
        (self.growth * base as f64).ceil() as usize
    }
}

/// The compressed-day multiplier of C3: four equal quarters repeating every
/// `duration_s`.
pub fn day_curve(values: [f64; 4], duration_s: f64) -> MultiplierCurve {
    let q = duration_s / 4.0;
    MultiplierCurve::piecewise(
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i as f64 * q, v))
            .collect(),
        Some(duration_s),
    )
}

fn gan_for(kind: ScenarioKind, gan: Option<&GanModel>) -> Result<&GanModel> {
    gan.ok_or_else(|| invalid(format!("scenario {} needs a GAN model", kind.name())))
}

pub fn make_scenario(
    kind: ScenarioKind,
    snapshot: &TwinSnapshot,
    gan: Option<&GanModel>,
    params: &ScenarioParams,
    seed: u64,
) -> Result<ScenarioSpec> {
    params.validate()?;
    if snapshot.is_empty() {
        return Err(invalid("scenario base snapshot is empty"));
    }
    let n0 = snapshot
        .nodes
        .iter()
        .filter(|n| n.id.kind() == NodeKind::Ue)
        .count();
    let dur = params.duration_s;
    let sub = derive_seed(seed, &[kind as u64]);
    let mut timeline = Vec::new();
    let mut gan_id = None;
    match kind {
        ScenarioKind::A => {}
        ScenarioKind::B => {
            let g = gan_for(kind, gan)?;
            let n_add = params.added_users(n0);
            let records = generate_flows(g, n_add, None, sub)?;
            for (k, record) in records.into_iter().enumerate() {
                timeline.push(TimedEvent {
                    t_s: (k + 1) as f64 * dur / (n_add + 1) as f64,
                    event: ScenarioEvent::AddUe {
                        record,
                        target_bs: None,
                    },
                });
            }
            gan_id = Some(g.id.clone());
        }
        ScenarioKind::C1 | ScenarioKind::C2 => {
            let factor = if kind == ScenarioKind::C1 {
                params.c1_factor
            } else {
                params.c2_factor
            };
            timeline.push(TimedEvent {
                t_s: 0.0,
                event: ScenarioEvent::ScaleTraffic { factor },
            });
        }
        ScenarioKind::C3 => {
            let g = gan_for(kind, gan)?;
            timeline.push(TimedEvent {
                t_s: 0.0,
                event: ScenarioEvent::SetMultiplierCurve {
                    curve: day_curve(params.day_curve, dur),
                },
            });
            for (q, hour) in HourBucket::ALL.into_iter().enumerate() {
                let records = generate_flows(
                    g,
                    n0.max(1),
                    Some(("hour_bucket", hour.name())),
                    derive_seed(sub, &[q as u64]),
                )?;
                timeline.push(TimedEvent {
                    t_s: q as f64 * dur / 4.0,
                    event: ScenarioEvent::RedrawMix {
                        traffic_types: records.iter().map(|r| r.traffic_type).collect(),
                    },
                });
            }
            gan_id = Some(g.id.clone());
        }
        ScenarioKind::D => {
            let g = gan_for(kind, gan)?;
            let mut rng = rng_from(sub);
            let t = rng.random_range(dur / 3.0..2.0 * dur / 3.0);
            timeline.push(TimedEvent {
                t_s: t,
                event: ScenarioEvent::ScaleTraffic {
                    factor: params.spike_factor,
                },
            });
            for record in generate_flows(g, params.added_users(n0), None, sub)? {
                timeline.push(TimedEvent {
                    t_s: t,
                    event: ScenarioEvent::AddUe {
                        record,
                        target_bs: None,
                    },
                });
            }
            gan_id = Some(g.id.clone());
        }
    }
    let spec = ScenarioSpec {
        id: format!("{}-{seed:016x}", kind.name()),
        kind,
        base_timestamp: snapshot.timestamp,
        base_hash: snapshot.content_hash(),
        base_ues: n0,
        timeline,
        duration_s: dur,
        seed,
        gan_model_id: gan_id,
    };
    spec.validate()?;
    Ok(spec)
}

impl ScenarioSpec {
    /// Check the structural rules of the scenario family.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(invalid(format!("scenario {}: {m}", self.id)));
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if self.timeline.windows(2).any(|w| w[1].t_s < w[0].t_s) {
            return bad("timeline is not ordered");
        }
        if self
            .timeline
            .iter()
            .any(|e| !(0.0..=self.duration_s).contains(&e.t_s))
        {
            return bad("event outside the scenario duration");
        }
        let adds = self
            .timeline
            .iter()
            .filter(|e| matches!(e.event, ScenarioEvent::AddUe { .. }))
            .count();
        let scales: Vec<(f64, f64)> = self
            .timeline
            .iter()
            .filter_map(|e| match e.event {
                ScenarioEvent::ScaleTraffic { factor } => Some((e.t_s, factor)),
                _ => None,
            })
            .collect();
        let times: std::collections::BTreeSet<u64> = self.timeline.iter().map(|e| e.t_s.to_bits()).collect();
        match self.kind {
            ScenarioKind::A if !self.timeline.is_empty() => bad("A has no events"),
            ScenarioKind::B if adds != self.timeline.len() || times.len() != adds => {
                bad("B adds one user per step")
            }
            ScenarioKind::C1 | ScenarioKind::C2
                if self.timeline.len() != 1 || scales.len() != 1 || scales[0].0 != 0.0 =>
            {
                bad("C1/C2 hold a single scale event at t = 0")
            }
            ScenarioKind::D if times.len() != 1 => bad("D events share one spike time"),
            kind if kind.needs_gan() && self.gan_model_id.is_none() => bad("missing GAN model id"),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Human-readable timeline.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {} (kind {}), {:.3} s from snapshot at t={} with {} UEs, seed {}",
            self.id,
            self.kind.name(),
            self.duration_s,
            self.base_timestamp,
            self.base_ues,
            self.seed
        );
        if let Some(g) = &self.gan_model_id {
            let _ = writeln!(out, "  synthetic data from {g}");
        }
        if self.timeline.is_empty() {
            let _ = writeln!(out, "  no events: mirrors the current network");
        }
        for e in &self.timeline {
            let what = match &e.event {
                ScenarioEvent::AddUe { record, target_bs } => format!(
                    "add UE: {} at {:.1} Mbps, {:.1} m from {}",
                    record.traffic_type,
                    record.offered_rate_mbps,
                    record.distance_m,
                    target_bs.map_or("the least-loaded BS".to_string(), |b| format!("bs-{b}"))
                ),
                ScenarioEvent::ScaleTraffic { factor } => format!("scale traffic x{factor}"),
                ScenarioEvent::SetMultiplierCurve { curve } => {
                    let pts: Vec<String> = curve
                        .points
                        .iter()
                        .map(|p| format!("{}@{:.3}s", p.value, p.at_s))
                        .collect();
                    format!("load curve {}", pts.join(" "))
                }
                ScenarioEvent::RedrawMix { traffic_types } => {
                    let mut counts = [0usize; 3];
                    for t in traffic_types {
                        counts[t.index()] += 1;
                    }
                    format!(
                        "redraw mix: CBR {} HTTP {} Video {}",
                        counts[0], counts[1], counts[2]
                    )
                }
            };
            let _ = writeln!(out, "  t={:8.3}s  {what}", e.t_s);
        }
        out
    }
}
