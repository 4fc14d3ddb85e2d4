use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    #[serde(rename = "BS")]
    Bs,
    #[serde(rename = "UE")]
    Ue,
}

/// Node identifier, written `bs-<id>` or `ue-<id>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum NodeId {
    Bs(u32),
    Ue(u32),
}

impl NodeId {
    pub fn kind(self) -> NodeKind {
        match self {
            NodeId::Bs(_) => NodeKind::Bs,
            NodeId::Ue(_) => NodeKind::Ue,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Bs(i) => write!(f, "bs-{i}"),
            NodeId::Ue(i) => write!(f, "ue-{i}"),
        }
    }
}

impl FromStr for NodeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid(format!("bad node id {s:?}"));
        let (kind, num) = s.split_once('-').ok_or_else(bad)?;
        let n: u32 = num.parse().map_err(|_| bad())?;
        match kind {
            "bs" => Ok(NodeId::Bs(n)),
            "ue" => Ok(NodeId::Ue(n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for NodeId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.to_string()
    }
}

/// Properties and telemetry of a twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum TwinState {
    #[serde(rename = "BS")]
    Bs {
        ssid: String,
        channel: u32,
        cpu_util: f64,
        /// Offered downlink load the agent measured, Mbps.
        #[serde(default)]
        offered_load_mbps: f64,
        /// Frames sensed per neighbour in the last interval.
        #[serde(default)]
        neighbours: Vec<(u32, u64)>,
    },
    #[serde(rename = "UE")]
    Ue {
        rx_packets: u64,
        tx_packets: u64,
        rssi_dbm: f64,
        associated_bs_mac: String,
    },
}

const BS_FIELDS: &[&str] = &["channel", "cpu_util", "offered_load_mbps"];
const UE_FIELDS: &[&str] = &["rx_packets", "tx_packets", "rssi_dbm"];

impl TwinState {
    pub fn kind(&self) -> NodeKind {
        match self {
            TwinState::Bs { .. } => NodeKind::Bs,
            TwinState::Ue { .. } => NodeKind::Ue,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TwinState::Bs {
                cpu_util,
                offered_load_mbps,
                ..
            } => {
                if !(0.0..=1.0).contains(cpu_util) {
                    return Err(invalid(format!("cpu_util {cpu_util} outside [0, 1]")));
                }
                if !(offered_load_mbps.is_finite() && *offered_load_mbps >= 0.0) {
                    return Err(invalid("offered load must be non-negative"));
                }
            }
            TwinState::Ue { rssi_dbm, .. } => {
                if !rssi_dbm.is_finite() {
                    return Err(invalid("rssi must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Numeric fields that history queries can read.
    pub fn fields(kind: NodeKind) -> &'static [&'static str] {
        match kind {
            NodeKind::Bs => BS_FIELDS,
            NodeKind::Ue => UE_FIELDS,
        }
    }

    pub fn field(&self, name: &str) -> Option<f64> {
        match (self, name) {
            (TwinState::Bs { channel, .. }, "channel") => Some(*channel as f64),
            (TwinState::Bs { cpu_util, .. }, "cpu_util") => Some(*cpu_util),
            (
                TwinState::Bs {
                    offered_load_mbps, ..
                },
                "offered_load_mbps",
            ) => Some(*offered_load_mbps),
            (TwinState::Ue { rx_packets, .. }, "rx_packets") => Some(*rx_packets as f64),
            (TwinState::Ue { tx_packets, .. }, "tx_packets") => Some(*tx_packets as f64),
            (TwinState::Ue { rssi_dbm, .. }, "rssi_dbm") => Some(*rssi_dbm),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinNode {
    pub id: NodeId,
    pub state: TwinState,
    pub last_update: f64,
    /// Set once a counter went backwards; excluded from feature extraction.
    #[serde(default)]
    pub quarantined: bool,
}

impl TwinNode {
    pub fn new(id: NodeId, state: TwinState, ts: f64) -> Self {
        Self {
            id,
            state,
            last_update: ts,
            quarantined: false,
        }
    }

    /// Overwrite with `incoming`. Returns true if this update newly
    /// quarantined the node.
    pub(crate) fn absorb(&mut self, incoming: &TwinState, ts: f64) -> bool {
        let mut flagged = false;
        match (&mut self.state, incoming) {
            (
                TwinState::Ue {
                    rx_packets,
                    tx_packets,
                    rssi_dbm,
                    associated_bs_mac,
                },
                TwinState::Ue {
                    rx_packets: rx,
                    tx_packets: tx,
                    rssi_dbm: r,
                    associated_bs_mac: mac,
                },
            ) => {
                if *rx < *rx_packets || *tx < *tx_packets {
                    flagged = !self.quarantined;
                    self.quarantined = true;
                } else {
                    *rx_packets = *rx;
                    *tx_packets = *tx;
                }
                *rssi_dbm = *r;
                associated_bs_mac.clone_from(mac);
            }
            (state, new) => {
                // BS digests are written separately from the record
                let keep = match state {
                    TwinState::Bs { neighbours, .. } => std::mem::take(neighbours),
                    _ => Vec::new(),
                };
                *state = new.clone();
                if let TwinState::Bs { neighbours, .. } = state {
                    if neighbours.is_empty() {
                        *neighbours = keep;
                    }
                }
            }
        }
        self.last_update = ts;
        flagged
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinRelationship {
    pub from_bs: u32,
    pub to_ue: u32,
    pub last_seen: f64,
}
