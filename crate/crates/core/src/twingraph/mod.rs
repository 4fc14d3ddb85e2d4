//! Graph of digital twins: a real-time twin fed by telemetry batches, a ring
//! of immutable retrospective snapshots and a store of prospective twins
//! produced by what-if runs.
//!
//! Share a graph between threads as [`SharedGraph`]; snapshots are `Arc`s
//! and can be handed out freely.

mod node;
mod persist;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dtconnect::TelemetryBatch;
use crate::error::{invalid, Error, Result};
use crate::netsim::{KpiVector, RadioConfig};

pub use node::{NodeId, NodeKind, TwinNode, TwinRelationship, TwinState};
pub use persist::{append_snapshot, read_snapshots};

pub const DEFAULT_RING_CAPACITY: usize = 256;

pub type SharedGraph = Arc<RwLock<TwinGraph>>;

/// Immutable copy of the real-time twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwinSnapshot {
    pub timestamp: f64,
    pub nodes: Vec<TwinNode>,
    pub relationships: Vec<TwinRelationship>,
    pub twinning_interval_s: f64,
}

impl TwinSnapshot {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        hash_json(self)
    }

    pub fn node(&self, id: NodeId) -> Option<&TwinNode> {
        self.nodes
            .binary_search_by(|n| n.id.cmp(&id))
            .ok()
            .map(|i| &self.nodes[i])
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    let bytes = serde_json::to_vec(v).expect("twin state serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Predicted outcome of running a candidate configuration through a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProspectiveTwin {
    pub scenario_id: String,
    pub config: RadioConfig,
    /// Predicted KPIs per scenario kind.
    pub predicted: Vec<(String, KpiVector)>,
    pub seed: u64,
    pub gan_model_id: Option<String>,
}

/// Nodes created or quarantined by one batch.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyReport {
    pub created: Vec<NodeId>,
    pub quarantined: Vec<NodeId>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GraphDoc", try_from = "GraphDoc")]
pub struct TwinGraph {
    nodes: BTreeMap<NodeId, TwinNode>,
    relationships: BTreeMap<(u32, u32), TwinRelationship>,
    last_update: f64,
    twinning_interval_s: f64,
    capacity: usize,
    ring: VecDeque<Arc<TwinSnapshot>>,
    scenarios: BTreeSet<String>,
    prospective: BTreeMap<u64, ProspectiveTwin>,
    next_prospective: u64,
}

impl Default for TwinGraph {
    fn default() -> Self {
        Self::new(DEFAULT_RING_CAPACITY)
    }
}

impl TwinGraph {
    pub fn new(capacity: usize) -> Self {
        Self {
            nodes: BTreeMap::new(),
            relationships: BTreeMap::new(),
            last_update: 0.0,
            twinning_interval_s: 0.0,
            capacity: capacity.max(1),
            ring: VecDeque::new(),
            scenarios: BTreeSet::new(),
            prospective: BTreeMap::new(),
            next_prospective: 0,
        }
    }

    pub fn shared(self) -> SharedGraph {
        Arc::new(RwLock::new(self))
    }

    pub fn last_update(&self) -> f64 {
        self.last_update
    }

    pub fn node(&self, id: NodeId) -> Option<&TwinNode> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TwinNode> {
        self.nodes.values()
    }

    pub fn relationships(&self) -> impl Iterator<Item = &TwinRelationship> {
        self.relationships.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of the real-time twin plus the retrospective ring.
    pub fn state_hash(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            nodes: Vec<&'a TwinNode>,
            rels: Vec<&'a TwinRelationship>,
            last_update: f64,
            ring: Vec<&'a TwinSnapshot>,
        }
        hash_json(&View {
            nodes: self.nodes.values().collect(),
            rels: self.relationships.values().collect(),
            last_update: self.last_update,
            ring: self.ring.iter().map(|s| s.as_ref()).collect(),
        })
    }

    /// Fold one batch into the real-time twin. Out-of-order batches and
    /// batches whose links reference unknown nodes are rejected without
    /// touching the graph. A UE whose packet counters go backwards is
    /// quarantined and keeps its previous counters.
    pub fn apply_telemetry(&mut self, batch: &TelemetryBatch) -> Result<ApplyReport> {
        let ts = batch.interval_end;
        if !ts.is_finite() || ts < self.last_update {
            return Err(Error::StaleBatch {
                batch_ts: ts,
                graph_ts: self.last_update,
            });
        }
        let incoming: BTreeSet<NodeId> = batch.records.iter().map(|r| r.id).collect();
        for r in &batch.records {
            if r.id.kind() != r.state.kind() {
                return Err(invalid(format!("record {} carries {:?} state", r.id, r.state.kind())));
            }
            r.state.validate()?;
        }
        let known = |id: NodeId| self.nodes.contains_key(&id) || incoming.contains(&id);
        for l in &batch.links {
            if !known(NodeId::Bs(l.from_bs)) || !known(NodeId::Ue(l.to_ue)) {
                return Err(invalid(format!(
                    "relationship bs-{} -> ue-{} has a missing endpoint",
                    l.from_bs, l.to_ue
                )));
            }
        }
        for d in &batch.digests {
            if !known(NodeId::Bs(d.bs_id)) {
                return Err(invalid(format!("digest for unknown bs-{}", d.bs_id)));
            }
        }

        let mut report = ApplyReport::default();
        for r in &batch.records {
            match self.nodes.get_mut(&r.id) {
                None => {
                    self.nodes.insert(r.id, TwinNode::new(r.id, r.state.clone(), ts));
                    report.created.push(r.id);
                }
                Some(node) => {
                    if node.absorb(&r.state, ts) {
                        report.quarantined.push(r.id);
                    }
                }
            }
        }
        for d in &batch.digests {
            if let Some(TwinNode {
                state: TwinState::Bs { neighbours, .. },
                ..
            }) = self.nodes.get_mut(&NodeId::Bs(d.bs_id))
            {
                neighbours.clone_from(&d.sensed);
            }
        }
        for l in &batch.links {
            self.relationships.insert(
                (l.from_bs, l.to_ue),
                TwinRelationship {
                    from_bs: l.from_bs,
                    to_ue: l.to_ue,
                    last_seen: ts,
                },
            );
        }
        self.last_update = ts;
        self.twinning_interval_s = batch.interval_end - batch.interval_start;
        Ok(report)
    }

    /// Append a deep copy of the real-time twin to the retrospective ring.
    pub fn snapshot_retrospective(&mut self) -> Result<Arc<TwinSnapshot>> {
        if self.nodes.is_empty() {
            return Err(invalid("cannot snapshot an empty graph"));
        }
        let timestamp = match self.ring.back() {
            Some(prev) if prev.timestamp >= self.last_update => prev.timestamp.next_up(),
            _ => self.last_update,
        };
        let snap = Arc::new(TwinSnapshot {
            timestamp,
            nodes: self.nodes.values().cloned().collect(),
            relationships: self.relationships.values().cloned().collect(),
            twinning_interval_s: self.twinning_interval_s,
        });
        if self.ring.len() == self.capacity {
            self.ring.pop_front();
        }
        self.ring.push_back(Arc::clone(&snap));
        Ok(snap)
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &Arc<TwinSnapshot>> {
        self.ring.iter()
    }

    pub fn latest_snapshot(&self) -> Option<Arc<TwinSnapshot>> {
        self.ring.back().cloned()
    }

    /// `(timestamp, value)` pairs of `field` of `id` from snapshots with
    /// timestamp in `[from, to]`, oldest first.
    pub fn query_history(&self, id: NodeId, field: &str, from: f64, to: f64) -> Result<Vec<(f64, f64)>> {
        let in_ring = self.ring.iter().any(|s| s.node(id).is_some());
        let kind = match self.nodes.get(&id) {
            Some(n) => n.state.kind(),
            None if in_ring => id.kind(),
            None => return Err(Error::NotFound(format!("node {id}"))),
        };
        if !TwinState::fields(kind).contains(&field) {
            return Err(Error::NotFound(format!("field {field} on {id}")));
        }
        Ok(self
            .ring
            .iter()
            .filter(|s| (from..=to).contains(&s.timestamp))
            .filter_map(|s| Some((s.timestamp, s.node(id)?.state.field(field)?)))
            .collect())
    }

    pub fn register_scenario(&mut self, id: impl Into<String>) {
        self.scenarios.insert(id.into());
    }

    pub fn has_scenario(&self, id: &str) -> bool {
        self.scenarios.contains(id)
    }

    /// Store a prospective twin. It never touches the real-time twin.
    pub fn record_prospective(&mut self, p: ProspectiveTwin) -> Result<u64> {
        if !self.scenarios.contains(&p.scenario_id) {
            return Err(Error::NotFound(format!("scenario {}", p.scenario_id)));
        }
        let same = |q: &ProspectiveTwin| {
            q.scenario_id == p.scenario_id
                && q.seed == p.seed
                && q.config.cst_dbm.to_bits() == p.config.cst_dbm.to_bits()
                && q.config.tpc_dbm.to_bits() == p.config.tpc_dbm.to_bits()
                && q.config.ue_tx_dbm.to_bits() == p.config.ue_tx_dbm.to_bits()
        };
        if self.prospective.values().any(same) {
            return Err(Error::Conflict(format!(
                "prospective twin for {} at {:?} seed {} already stored",
                p.scenario_id, p.config, p.seed
            )));
        }
        let id = self.next_prospective;
        self.next_prospective += 1;
        self.prospective.insert(id, p);
        Ok(id)
    }

    pub fn prospective(&self, id: u64) -> Option<&ProspectiveTwin> {
        self.prospective.get(&id)
    }

    pub fn prospective_for(&self, scenario_id: &str) -> Vec<(u64, &ProspectiveTwin)> {
        self.prospective
            .iter()
            .filter(|(_, p)| p.scenario_id == scenario_id)
            .map(|(&id, p)| (id, p))
            .collect()
    }

    pub fn prospective_for_config(&self, scenario_id: &str, config: &RadioConfig) -> Vec<&ProspectiveTwin> {
        self.prospective
            .values()
            .filter(|p| p.scenario_id == scenario_id && p.config == *config)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// On-disk form of a graph.
#[derive(Serialize, Deserialize)]
struct GraphDoc {
    last_update: f64,
    twinning_interval_s: f64,
    capacity: usize,
    nodes: Vec<TwinNode>,
    relationships: Vec<TwinRelationship>,
    snapshots: Vec<TwinSnapshot>,
    scenarios: Vec<String>,
    prospective: Vec<(u64, ProspectiveTwin)>,
}

impl From<TwinGraph> for GraphDoc {
    fn from(g: TwinGraph) -> Self {
        Self {
            last_update: g.last_update,
            twinning_interval_s: g.twinning_interval_s,
            capacity: g.capacity,
            nodes: g.nodes.into_values().collect(),
            relationships: g.relationships.into_values().collect(),
            snapshots: g.ring.iter().map(|s| (**s).clone()).collect(),
            scenarios: g.scenarios.into_iter().collect(),
            prospective: g.prospective.into_iter().collect(),
        }
    }
}

impl TryFrom<GraphDoc> for TwinGraph {
    type Error = Error;

    fn try_from(d: GraphDoc) -> Result<Self> {
        if d.snapshots.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
            return Err(invalid("snapshot ring is not strictly ordered"));
        }
        if d.snapshots.len() > d.capacity.max(1) {
            return Err(invalid("more snapshots than ring capacity"));
        }
        let next_prospective = d.prospective.iter().map(|(id, _)| id + 1).max().unwrap_or(0);
        Ok(Self {
            nodes: d.nodes.into_iter().map(|n| (n.id, n)).collect(),
            relationships: d
                .relationships
                .into_iter()
                .map(|r| ((r.from_bs, r.to_ue), r))
                .collect(),
            last_update: d.last_update,
            twinning_interval_s: d.twinning_interval_s,
            capacity: d.capacity.max(1),
            ring: d.snapshots.into_iter().map(Arc::new).collect(),
            scenarios: d.scenarios.into_iter().collect(),
            prospective: d.prospective.into_iter().collect(),
            next_prospective,
        })
    }
}
