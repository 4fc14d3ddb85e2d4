use serde::{Deserialize, Serialize};

use super::engine::SimResult;
use super::topology::Topology;
use crate::error::{invalid, Result};

/// Raw KPIs of one run: throughput (Mbps, aggregate), mean latency (ms),
/// loss fraction and coverage fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KpiVector {
    pub t: f64,
    pub l: f64,
    pub pl: f64,
    pub c: f64,
}

impl KpiVector {
    pub fn validate(&self) -> Result<()> {
        let ok = self.t.is_finite()
            && self.t >= 0.0
            && self.l.is_finite()
            && self.l >= 0.0
            && (0.0..=1.0).contains(&self.pl)
            && (0.0..=1.0).contains(&self.c);
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("KPI vector out of domain: {self:?}")))
        }
    }
}

pub const DEFAULT_SENSITIVITY_DBM: f64 = -82.0;

pub fn measure_kpis(result: &SimResult, topology: &Topology, sensitivity_dbm: f64) -> Result<KpiVector> {
    if result.ues.len() != topology.ues.len()
        || result.bss.len() != topology.bss.len()
        || result.rssi_map.len() != topology.bss.len()
        || result
            .ues
            .iter()
            .zip(&topology.ues)
            .any(|(c, u)| c.ue_id != u.id)
    {
        return Err(invalid("simulation result does not belong to this topology"));
    }
    let sent = result.total_sent();
    let delivered = result.total_delivered();
    let lost = result.total_lost();
    let secs = result.duration_s();
    let t = delivered as f64 * result.packet_bytes as f64 * 8.0 / secs / 1e6;
    let lat_slots: u64 = result.ues.iter().map(|u| u.sum_latency_slots).sum();
    let l = if delivered == 0 {
        0.0
    } else {
        lat_slots as f64 / delivered as f64 * result.slot_duration_us / 1000.0
    };
    let pl = if sent == 0 { 0.0 } else { lost as f64 / sent as f64 };
    let c = if topology.ues.is_empty() {
        1.0
    } else {
        let covered = result
            .serving_rssi(topology)
            .into_iter()
            .filter(|&r| r >= sensitivity_dbm)
            .count();
        covered as f64 / topology.ues.len() as f64
    };
    Ok(KpiVector { t, l, pl, c })
}
