use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::SimConfig;
use crate::twingraph::{TwinSnapshot, TwinState};

/// Network-level features the service models read from a snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Mean number of neighbouring BSs heard above the sensitivity.
    pub neighbours: f64,
    /// Mean serving RSSI, dBm.
    pub rssi_dbm: f64,
    /// Mean contention-domain offered load over the PHY rate, clamped.
    pub load_fraction: f64,
    pub pl: f64,
    pub c: f64,
}

pub const FEATURE_DIM: usize = 5;

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [self.neighbours, self.rssi_dbm, self.load_fraction, self.pl, self.c]
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |x: f64| (0.0..=1.0).contains(&x);
        if self.to_array().iter().all(|x| x.is_finite())
            && self.neighbours >= 0.0
            && frac(self.load_fraction)
            && frac(self.pl)
            && frac(self.c)
        {
            Ok(())
        } else {
            Err(invalid(format!("feature vector out of domain: {self:?}")))
        }
    }
}

/// Extract features from a snapshot. Quarantined nodes are skipped; loads
/// of neighbours that are missing or quarantined are imputed with the
/// snapshot mean, and a snapshot without UE telemetry gets sensitivity-level
/// RSSI, no loss and full coverage.
pub fn preprocess_flows(snapshot: &TwinSnapshot, cfg: &SimConfig) -> Result<FeatureVector> {
    let mut loads = BTreeMap::new();
    let mut heard = Vec::new();
    for n in snapshot.nodes.iter().filter(|n| !n.quarantined) {
        if let (crate::twingraph::NodeId::Bs(id), TwinState::Bs { offered_load_mbps, neighbours, .. }) = (n.id, &n.state) {
            loads.insert(id, *offered_load_mbps);
            heard.push((id, neighbours.iter().map(|&(nb, _)| nb).collect::<Vec<_>>()));
        }
    }
    if loads.is_empty() {
        return Err(invalid("snapshot holds no BS telemetry"));
    }
    let nb = loads.len() as f64;
    let mean_load = loads.values().sum::<f64>() / nb;
    let mut domain = 0.0;
    let mut neigh = 0.0;
    for (id, ns) in &heard {
        domain += loads[id] + ns.iter().map(|j| loads.get(j).copied().unwrap_or(mean_load)).sum::<f64>();
        neigh += ns.len() as f64;
    }
    let load_fraction = (domain / nb / cfg.phy_rate_mbps).clamp(0.0, 1.0);

    let (mut rssi, mut covered, mut ues) = (0.0, 0usize, 0usize);
    let (mut rx, mut tx) = (0u64, 0u64);
    for n in snapshot.nodes.iter().filter(|n| !n.quarantined) {
        if let TwinState::Ue { rx_packets, tx_packets, rssi_dbm, .. } = &n.state {
            ues += 1;
            rssi += rssi_dbm;
            covered += usize::from(*rssi_dbm >= cfg.sensitivity_dbm);
            rx += rx_packets;
            tx += tx_packets;
        }
    }
    let (rssi_dbm, c) = if ues == 0 {
        (cfg.sensitivity_dbm, 1.0)
    } else {
        (rssi / ues as f64, covered as f64 / ues as f64)
    };
    let pl = if tx == 0 {
        0.0
    } else {
        (tx.saturating_sub(rx) as f64 / tx as f64).clamp(0.0, 1.0)
    };
    let f = FeatureVector {
        neighbours: neigh / nb,
        rssi_dbm,
        load_fraction,
        pl,
        c,
    };
    f.validate()?;
    Ok(f)
}
