//! Expansion of a scenario timeline into simulator inputs.

use std::f64::consts::PI;

use super::{ScenarioEvent, ScenarioSpec};
use crate::error::{invalid, Result};
use crate::netsim::{Flow, MultiplierCurve, Topology, TrafficProfile};

/// Simulator inputs holding from `t_s` until the next step.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioStep {
    pub t_s: f64,
    pub topology: Topology,
    pub traffic: TrafficProfile,
}

/// Golden-angle bearings keep successive synthetic users apart.
fn bearing(k: usize) -> f64 {
    (k as f64 * PI * (3.0 - 5f64.sqrt())).rem_euclid(2.0 * PI)
}

fn least_loaded(topology: &Topology, traffic: &TrafficProfile) -> u32 {
    let load = traffic.offered_per_bss(topology);
    topology
        .bss
        .iter()
        .map(|b| (b.id, load.get(&b.id).copied().unwrap_or(0.0)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map_or(0, |(id, _)| id)
}

struct State {
    topology: Topology,
    traffic: TrafficProfile,
    /// Product of scale events so far; applied to users joining later.
    factor: f64,
    added: usize,
}

impl State {
    fn apply(&mut self, ev: &ScenarioEvent) -> Result<()> {
        match ev {
            ScenarioEvent::AddUe { record, target_bs } => {
                let bs = match target_bs {
                    Some(b) if self.topology.bs_index(*b).is_none() => {
                        return Err(invalid(format!("scenario event references unknown BS {b}")));
                    }
                    Some(b) => *b,
                    None => least_loaded(&self.topology, &self.traffic),
                };
                let id = self.topology.add_ue_at(bs, record.distance_m, bearing(self.added))?;
                self.added += 1;
                self.traffic.flows.push(Flow::new(
                    id,
                    record.traffic_type,
                    record.offered_rate_mbps * self.factor,
                ));
            }
            ScenarioEvent::ScaleTraffic { factor } => {
                self.traffic.scale(*factor);
                self.factor *= factor;
            }
            ScenarioEvent::SetMultiplierCurve { curve } => {
                curve.validate()?;
                self.traffic.multiplier = curve.clone();
            }
            ScenarioEvent::RedrawMix { traffic_types } => {
                if !traffic_types.is_empty() {
                    for (i, f) in self.traffic.flows.iter_mut().enumerate() {
                        f.traffic_type = traffic_types[i % traffic_types.len()];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Inputs for every distinct event time, starting at t = 0. Events at t = 0
/// are folded into the first step.
pub fn apply_scenario(
    spec: &ScenarioSpec,
    topology: &Topology,
    traffic: &TrafficProfile,
) -> Result<Vec<ScenarioStep>> {
    spec.validate()?;
    topology.validate()?;
    traffic.validate(topology)?;
    let mut st = State {
        topology: topology.clone(),
        traffic: traffic.clone(),
        factor: 1.0,
        added: 0,
    };
    let mut steps = Vec::new();
    let mut i = 0;
    let mut t = 0.0;
    loop {
        while i < spec.timeline.len() && spec.timeline[i].t_s <= t {
            st.apply(&spec.timeline[i].event)?;
            i += 1;
        }
        steps.push(ScenarioStep {
            t_s: t,
            topology: st.topology.clone(),
            traffic: st.traffic.clone(),
        });
        match spec.timeline.get(i) {
            Some(e) => t = e.t_s,
            None => break,
        }
    }
    Ok(steps)
}

/// One topology and traffic profile whose single run reproduces the whole
/// timeline: joining users get flows starting at their join time, scale
/// events after t = 0 become multiplier steps and mix redraws split flows
/// into time windows.
pub fn flatten_scenario(
    spec: &ScenarioSpec,
    topology: &Topology,
    traffic: &TrafficProfile,
) -> Result<(Topology, TrafficProfile)> {
    let steps = apply_scenario(spec, topology, traffic)?;
    let last = steps.last().expect("at least one step");
    let first = &steps[0];
    let topo = last.topology.clone();
    topo.validate()?;
    let horizon = spec.duration_s;

    // cumulative factor of the scale events after t = 0
    let mut scale_points: Vec<(f64, f64)> = Vec::new();
    let mut factor = 1.0;
    for e in &spec.timeline {
        if e.t_s > 0.0 {
            if let ScenarioEvent::ScaleTraffic { factor: f } = e.event {
                factor *= f;
                scale_points.push((e.t_s, factor));
            }
        }
    }

    let mut flows: Vec<Flow> = Vec::new();
    for (si, step) in steps.iter().enumerate() {
        let start = step.t_s;
        let stop = steps.get(si + 1).map(|s| s.t_s);
        for f in &step.traffic.flows {
            // rates of this step with later scale steps undone; the
            // multiplier re-applies them in time
            let applied = scale_points
                .iter()
                .filter(|(t, _)| *t <= start)
                .map(|(_, f)| *f)
                .next_back()
                .unwrap_or(1.0);
            flows.push(Flow {
                ue_id: f.ue_id,
                traffic_type: f.traffic_type,
                offered_rate_mbps: f.offered_rate_mbps / applied,
                start_s: start,
                stop_s: stop,
            });
        }
    }
    // merge consecutive windows of an unchanged flow
    let mut merged: Vec<Flow> = Vec::new();
    for f in flows {
        match merged.iter_mut().rev().find(|m| m.ue_id == f.ue_id) {
            Some(m)
                if m.stop_s == Some(f.start_s)
                    && m.traffic_type == f.traffic_type
                    && (m.offered_rate_mbps - f.offered_rate_mbps).abs()
                        <= 1e-12 * m.offered_rate_mbps.abs().max(1.0) =>
            {
                m.stop_s = f.stop_s;
            }
            _ => merged.push(f),
        }
    }

    let mut scale_curve = vec![(0.0, 1.0)];
    scale_curve.extend(scale_points);
    let scale_curve = MultiplierCurve::piecewise(scale_curve, None);
    let multiplier = last.traffic.multiplier.multiply(&scale_curve, horizon);
    let out = TrafficProfile {
        flows: merged,
        target_per_bss_mbps: first.traffic.target_per_bss_mbps,
        onoff: first.traffic.onoff.clone(),
        multiplier,
    };
    out.validate(&topo)?;
    Ok((topo, out))
}
