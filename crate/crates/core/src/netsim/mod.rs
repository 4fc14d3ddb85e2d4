//! Physical twin: a deterministic slot-based simulator of a dense co-channel
//! WLAN, plus the KPIs measured from it.

mod engine;
mod kpi;
mod propagation;
mod topology;
mod traffic;

pub use engine::{
    resolve_contention, rssi_matrix, simulate, simulate_traced, simulate_with, BsCounters, BsSample,
    SimConfig, SimResult, Simulation, TelemetrySample, UeCounters, UeSample,
};
pub use kpi::{measure_kpis, KpiVector, DEFAULT_SENSITIVITY_DBM};
pub use propagation::{dbm_to_mw, mw_to_dbm, path_loss_db, rssi_dbm};
pub use topology::{
    build_topology, BaseStation, Position, RadioConfig, Topology, UserEquipment, CST_RANGE_DBM,
    TX_POWER_RANGE_DBM,
};
pub use traffic::{
    CurvePoint, Flow, MultiplierCurve, OnOffParams, TrafficMix, TrafficProfile, TrafficType,
    DEFAULT_TARGET_PER_BSS_MBPS,
};

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub fn load_topology(path: &Path) -> Result<Topology> {
    let t: Topology = serde_json::from_slice(&std::fs::read(path)?)?;
    t.validate()?;
    Ok(t)
}

pub fn save_topology(t: &Topology, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(t)?)?;
    Ok(())
}

pub fn load_traffic(path: &Path) -> Result<TrafficProfile> {
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

pub fn save_traffic(p: &TrafficProfile, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(p)?)?;
    Ok(())
}

/// One CSV row per UE:
/// `ue_id,serving_bs,rssi_dbm,packets_sent,packets_delivered,packets_lost,sum_latency_slots,packets_pending`.
pub fn write_result_csv<W: Write>(result: &SimResult, topology: &Topology, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "ue_id",
        "serving_bs",
        "rssi_dbm",
        "packets_sent",
        "packets_delivered",
        "packets_lost",
        "sum_latency_slots",
        "packets_pending",
    ])?;
    let rssi = result.serving_rssi(topology);
    for ((c, ue), r) in result.ues.iter().zip(&topology.ues).zip(rssi) {
        w.write_record([
            c.ue_id.to_string(),
            ue.serving_bs.to_string(),
            format!("{r:.3}"),
            c.packets_sent.to_string(),
            c.packets_delivered.to_string(),
            c.packets_lost.to_string(),
            c.sum_latency_slots.to_string(),
            c.packets_pending.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
