//! Source/sink pipeline from the physical twin to the twin graph.
//!
//! Agents report a [`TelemetrySample`] every sample period. A [`Collector`]
//! folds the samples of one twinning interval into a [`TelemetryBatch`]:
//! telemetry fields are averaged, properties keep their last value and
//! sensed-frame digests are summed.

mod wire;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::TelemetrySample;
use crate::twingraph::{NodeId, TwinState};

pub use wire::{decode_batch, decode_stream, encode_batch, read_batches, write_batches};

pub const DEFAULT_SAMPLE_PERIOD_S: f64 = 0.1;
/// All BSs share one channel.
pub const DEFAULT_CHANNEL: u32 = 36;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinningInterval {
    pub seconds: f64,
    pub sample_period: f64,
}

impl TwinningInterval {
    pub fn new(seconds: f64) -> Result<Self> {
        let t = Self {
            seconds,
            sample_period: DEFAULT_SAMPLE_PERIOD_S,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_period > 0.0 && self.seconds >= self.sample_period && self.seconds.is_finite()) {
            return Err(invalid(format!(
                "twinning interval {}s must be at least the sample period {}s",
                self.seconds, self.sample_period
            )));
        }
        Ok(())
    }

    /// Number of samples folded into one batch.
    pub fn samples_per_batch(&self) -> usize {
        ((self.seconds / self.sample_period).round() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub state: TwinState,
}

/// UE association seen during the interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkRecord {
    pub from_bs: u32,
    pub to_ue: u32,
}

/// Frames a BS sensed from each neighbour during the interval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketDigest {
    pub bs_id: u32,
    pub sensed: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryBatch {
    pub interval_start: f64,
    pub interval_end: f64,
    #[serde(default)]
    pub records: Vec<NodeRecord>,
    #[serde(default)]
    pub links: Vec<LinkRecord>,
    #[serde(default)]
    pub digests: Vec<PacketDigest>,
}

impl TelemetryBatch {
    pub fn empty(interval_start: f64, interval_end: f64) -> Self {
        Self {
            interval_start,
            interval_end,
            records: Vec::new(),
            links: Vec::new(),
            digests: Vec::new(),
        }
    }
}

/// MAC address an agent reports for BS `id`.
pub fn bs_mac(id: u32) -> String {
    format!("02:00:00:00:{:02x}:{:02x}", (id >> 8) & 0xff, id & 0xff)
}

pub fn bs_ssid(id: u32) -> String {
    format!("bss-{id}")
}

#[derive(Default)]
struct BsAcc {
    cpu: f64,
    load: f64,
    n: usize,
    sensed: BTreeMap<u32, u64>,
}

#[derive(Default)]
struct UeAcc {
    rssi: f64,
    n: usize,
    rx: u64,
    tx: u64,
    serving: u32,
}

/// Streaming aggregator; emits a batch each time a full interval of samples
/// has been pushed.
pub struct Collector {
    interval: TwinningInterval,
    per_batch: usize,
    count: usize,
    start: f64,
    last_end: Option<f64>,
    bss: BTreeMap<u32, BsAcc>,
    ues: BTreeMap<u32, UeAcc>,
}

impl Collector {
    pub fn new(interval: TwinningInterval) -> Result<Self> {
        interval.validate()?;
        Ok(Self {
            per_batch: interval.samples_per_batch(),
            interval,
            count: 0,
            start: 0.0,
            last_end: None,
            bss: BTreeMap::new(),
            ues: BTreeMap::new(),
        })
    }

    pub fn interval(&self) -> TwinningInterval {
        self.interval
    }

    pub fn push(&mut self, sample: &TelemetrySample) -> Option<TelemetryBatch> {
        if self.count == 0 {
            self.start = self
                .last_end
                .unwrap_or((sample.t_s - self.interval.sample_period).max(0.0));
        }
        for b in &sample.bss {
            let acc = self.bss.entry(b.bs_id).or_default();
            acc.cpu += b.cpu_util;
            acc.load += b.offered_load_mbps;
            acc.n += 1;
            for &(nb, c) in &b.sensed_frames {
                *acc.sensed.entry(nb).or_default() += c;
            }
        }
        for u in &sample.ues {
            let acc = self.ues.entry(u.ue_id).or_default();
            acc.rssi += u.rssi_dbm;
            acc.n += 1;
            acc.rx = u.rx_packets;
            acc.tx = u.tx_packets;
            acc.serving = u.serving_bs;
        }
        self.count += 1;
        if self.count < self.per_batch {
            return None;
        }
        Some(self.flush(sample.t_s))
    }

    fn flush(&mut self, end: f64) -> TelemetryBatch {
        let mut batch = TelemetryBatch::empty(self.start, end);
        for (id, acc) in std::mem::take(&mut self.bss) {
            let n = acc.n.max(1) as f64;
            let neighbours: Vec<(u32, u64)> = acc.sensed.into_iter().collect();
            batch.records.push(NodeRecord {
                id: NodeId::Bs(id),
                state: TwinState::Bs {
                    ssid: bs_ssid(id),
                    channel: DEFAULT_CHANNEL,
                    cpu_util: acc.cpu / n,
                    offered_load_mbps: acc.load / n,
                    neighbours: Vec::new(),
                },
            });
            batch.digests.push(PacketDigest {
                bs_id: id,
                sensed: neighbours,
            });
        }
        for (id, acc) in std::mem::take(&mut self.ues) {
            batch.records.push(NodeRecord {
                id: NodeId::Ue(id),
                state: TwinState::Ue {
                    rx_packets: acc.rx,
                    tx_packets: acc.tx,
                    rssi_dbm: acc.rssi / acc.n.max(1) as f64,
                    associated_bs_mac: bs_mac(acc.serving),
                },
            });
            batch.links.push(LinkRecord {
                from_bs: acc.serving,
                to_ue: id,
            });
        }
        self.count = 0;
        self.last_end = Some(end);
        batch
    }
}

/// Fold an ordered sample stream into batches. A trailing partial interval is
/// dropped.
pub fn collect(samples: &[TelemetrySample], interval: TwinningInterval) -> Result<Vec<TelemetryBatch>> {
    if samples.windows(2).any(|w| w[1].t_s < w[0].t_s) {
        return Err(invalid("sample stream is not ordered by time"));
    }
    let mut c = Collector::new(interval)?;
    Ok(samples.iter().filter_map(|s| c.push(s)).collect())
}
