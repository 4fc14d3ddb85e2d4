//! Slot-based contention engine.
//!
//! One slot is the airtime of one packet. Each slot, backlogged BSs whose
//! backoff counter reached zero contend in a seeded random order; a contender
//! transmits only if the summed power it senses from BSs already transmitting
//! in this slot is below its CST. Every transmission then succeeds iff the
//! SINR at the receiving UE clears the threshold.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Pareto};
use serde::{Deserialize, Serialize};

use super::propagation::{dbm_to_mw, rssi_dbm};
use super::topology::{RadioConfig, Topology};
use super::traffic::{TrafficProfile, TrafficType};
use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from, SimRng};

/// PHY/MAC parameters of the slot abstraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub phy_rate_mbps: f64,
    pub packet_bytes: u32,
    pub noise_floor_dbm: f64,
    pub sinr_threshold_db: f64,
    pub retry_limit: u8,
    /// Backoff is drawn uniformly from `0..=backoff_window` slots.
    pub backoff_window: u16,
    /// Per-BS buffer in packets; arrivals to a full buffer are lost.
    pub queue_limit: usize,
    /// Receiver sensitivity used for the coverage KPI.
    pub sensitivity_dbm: f64,
    /// Carried as metadata; beacons consume no airtime.
    pub beacon_interval_ms: f64,
    /// Carried as metadata.
    pub guard_interval_us: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            phy_rate_mbps: 86.7,
            packet_bytes: 1464,
            noise_floor_dbm: -94.0,
            sinr_threshold_db: 25.0,
            retry_limit: 7,
            backoff_window: 15,
            queue_limit: 256,
            sensitivity_dbm: -82.0,
            beacon_interval_ms: 102.4,
            guard_interval_us: 1.6,
        }
    }
}

impl SimConfig {
    pub fn slot_duration_us(&self) -> f64 {
        self.packet_bytes as f64 * 8.0 / self.phy_rate_mbps
    }

    pub fn slots_for_seconds(&self, seconds: f64) -> u64 {
        (seconds * 1e6 / self.slot_duration_us()).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phy_rate_mbps > 0.0) || self.packet_bytes == 0 {
            return Err(invalid("PHY rate and packet size must be positive"));
        }
        if self.queue_limit == 0 {
            return Err(invalid("queue limit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UeCounters {
    pub ue_id: u32,
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_lost: u64,
    pub sum_latency_slots: u64,
    /// Packets still buffered when the run ended; not part of `packets_sent`.
    pub packets_pending: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BsCounters {
    pub bs_id: u32,
    pub airtime_busy_slots: u64,
    pub deferral_count: u64,
    pub collision_count: u64,
}

/// Packet-level outcome of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub ues: Vec<UeCounters>,
    pub bss: Vec<BsCounters>,
    pub duration_slots: u64,
    pub slot_duration_us: f64,
    pub packet_bytes: u32,
    /// Received power in dBm, indexed `[bs][ue]` in topology order.
    pub rssi_map: Vec<Vec<f64>>,
}

impl SimResult {
    pub fn total_sent(&self) -> u64 {
        self.ues.iter().map(|u| u.packets_sent).sum()
    }

    pub fn total_delivered(&self) -> u64 {
        self.ues.iter().map(|u| u.packets_delivered).sum()
    }

    pub fn total_lost(&self) -> u64 {
        self.ues.iter().map(|u| u.packets_lost).sum()
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_slots as f64 * self.slot_duration_us * 1e-6
    }

    /// RSSI of each UE from its serving BS.
    pub fn serving_rssi(&self, topology: &Topology) -> Vec<f64> {
        topology
            .ues
            .iter()
            .enumerate()
            .map(|(u, ue)| {
                let b = topology.bs_index(ue.serving_bs).unwrap_or(0);
                self.rssi_map[b][u]
            })
            .collect()
    }
}

/// RSSI matrix `[bs][ue]` for a topology.
pub fn rssi_matrix(topology: &Topology) -> Vec<Vec<f64>> {
    topology
        .bss
        .iter()
        .map(|bs| {
            topology
                .ues
                .iter()
                .map(|ue| rssi_dbm(bs.radio.tpc_dbm, bs.position.distance(&ue.position)))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    ue: u32,
    enqueued: u64,
    retries: u8,
}

struct Source {
    bs: usize,
    ue: usize,
    kind: TrafficType,
    rate_mbps: f64,
    /// Continuous arrival clock, in slots.
    next: f64,
    stop: f64,
    on_until: f64,
    byte_credit: f64,
}

/// Per-BS telemetry accumulated over one sample period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsSample {
    pub bs_id: u32,
    /// Share of the period the BS spent transmitting.
    pub cpu_util: f64,
    pub offered_load_mbps: f64,
    /// Frames sensed above the receiver sensitivity, per transmitting neighbour.
    pub sensed_frames: Vec<(u32, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeSample {
    pub ue_id: u32,
    pub serving_bs: u32,
    pub rssi_dbm: f64,
    /// Cumulative packets delivered to the UE.
    pub rx_packets: u64,
    /// Cumulative packets the serving BS finished sending to the UE.
    pub tx_packets: u64,
}

/// What the agent program on the physical network reports once per sample
/// period. `t_s` is the end of the period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySample {
    pub t_s: f64,
    pub bss: Vec<BsSample>,
    pub ues: Vec<UeSample>,
}

struct Links {
    rssi_map: Vec<Vec<f64>>,
    /// `gain[ue][bs]`, mW
    gain: Vec<Vec<f64>>,
    /// `sensed_mw[tx][rx]` between BSs, mW
    sensed_mw: Vec<Vec<f64>>,
    cst_mw: Vec<f64>,
    /// BSs that decode frames of each transmitter above sensitivity
    hearers: Vec<Vec<usize>>,
}

impl Links {
    fn new(cfg: &SimConfig, topology: &Topology) -> Self {
        let n_bs = topology.bss.len();
        let n_ue = topology.ues.len();
        let rssi_map = rssi_matrix(topology);
        let gain = (0..n_ue)
            .map(|u| (0..n_bs).map(|b| dbm_to_mw(rssi_map[b][u])).collect())
            .collect();
        let bs_rssi: Vec<Vec<f64>> = topology
            .bss
            .iter()
            .map(|tx| {
                topology
                    .bss
                    .iter()
                    .map(|rx| rssi_dbm(tx.radio.tpc_dbm, tx.position.distance(&rx.position)))
                    .collect()
            })
            .collect();
        let hearers = bs_rssi
            .iter()
            .enumerate()
            .map(|(t, row)| {
                row.iter()
                    .enumerate()
                    .filter(|&(r, &p)| r != t && p >= cfg.sensitivity_dbm)
                    .map(|(r, _)| r)
                    .collect()
            })
            .collect();
        Self {
            rssi_map,
            gain,
            sensed_mw: bs_rssi
                .iter()
                .map(|row| row.iter().map(|&p| dbm_to_mw(p)).collect())
                .collect(),
            cst_mw: topology.bss.iter().map(|b| dbm_to_mw(b.radio.cst_dbm)).collect(),
            hearers,
        }
    }
}

/// A resumable run of the physical twin. Radio configuration may be changed
/// between segments; queues and counters carry over.
pub struct Simulation<'a> {
    cfg: SimConfig,
    topology: Topology,
    traffic: &'a TrafficProfile,
    links: Links,
    slot_s: f64,
    noise_mw: f64,
    sinr_lin: f64,
    sources: Vec<Source>,
    heap: BinaryHeap<Reverse<(u64, usize)>>,
    queues: Vec<VecDeque<Packet>>,
    backoff: Vec<u16>,
    order: Vec<usize>,
    rng: SimRng,
    ue_stats: Vec<UeCounters>,
    bs_stats: Vec<BsCounters>,
    slot: u64,
    trace: Option<Vec<u16>>,
    // since the last telemetry sample
    sample_start: u64,
    offered_bits: Vec<f64>,
    busy: Vec<u64>,
    sensed: Vec<Vec<u64>>,
}

impl<'a> Simulation<'a> {
    pub fn new(
        cfg: &SimConfig,
        topology: &Topology,
        traffic: &'a TrafficProfile,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        topology.validate()?;
        traffic.validate(topology)?;
        let n_bs = topology.bss.len();
        let slot_s = cfg.slot_duration_us() * 1e-6;
        let mut rng = rng_from(derive_seed(seed, &[0x51A7]));
        let ue_bs: Vec<usize> = topology
            .ues
            .iter()
            .map(|u| topology.bs_index(u.serving_bs).unwrap_or(0))
            .collect();
        let mut sources = Vec::new();
        for f in &traffic.flows {
            if f.offered_rate_mbps <= 0.0 {
                continue;
            }
            let ue = topology.ue_index(f.ue_id).unwrap_or(0);
            let start = f.start_s / slot_s;
            // random phase so sources do not fire in lockstep
            let phase = match f.traffic_type {
                TrafficType::Cbr => {
                    rng.random::<f64>() * cfg.packet_bytes as f64 * 8.0
                        / (f.offered_rate_mbps * 1e6)
                        / slot_s
                }
                TrafficType::Video => rng.random::<f64>() / traffic.onoff.video_fps / slot_s,
                TrafficType::Http => 0.0,
            };
            sources.push(Source {
                bs: ue_bs[ue],
                ue,
                kind: f.traffic_type,
                rate_mbps: f.offered_rate_mbps,
                next: start + phase,
                stop: f.stop_s.map_or(f64::INFINITY, |e| e / slot_s),
                on_until: start,
                byte_credit: 0.0,
            });
        }
        let backoff = (0..n_bs)
            .map(|_| rng.random_range(0..=cfg.backoff_window))
            .collect();
        let mut sim = Self {
            cfg: cfg.clone(),
            topology: topology.clone(),
            traffic,
            links: Links::new(cfg, topology),
            slot_s,
            noise_mw: dbm_to_mw(cfg.noise_floor_dbm),
            sinr_lin: 10f64.powf(cfg.sinr_threshold_db / 10.0),
            sources,
            heap: BinaryHeap::new(),
            queues: vec![VecDeque::new(); n_bs],
            backoff,
            order: Vec::with_capacity(n_bs),
            rng,
            ue_stats: topology
                .ues
                .iter()
                .map(|u| UeCounters {
                    ue_id: u.id,
                    ..Default::default()
                })
                .collect(),
            bs_stats: topology
                .bss
                .iter()
                .map(|b| BsCounters {
                    bs_id: b.id,
                    ..Default::default()
                })
                .collect(),
            slot: 0,
            trace: None,
            sample_start: 0,
            offered_bits: vec![0.0; n_bs],
            busy: vec![0; n_bs],
            sensed: vec![vec![0; n_bs]; n_bs],
        };
        for i in 0..sim.sources.len() {
            sim.schedule(i);
        }
        Ok(sim)
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn now_slot(&self) -> u64 {
        self.slot
    }

    pub fn now_s(&self) -> f64 {
        self.slot as f64 * self.slot_s
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    /// Switch every BS to `radio` from the current slot on.
    pub fn set_radio(&mut self, radio: RadioConfig) -> Result<()> {
        radio.validate()?;
        for bs in &mut self.topology.bss {
            bs.radio = radio;
        }
        self.links = Links::new(&self.cfg, &self.topology);
        Ok(())
    }

    fn multiplier(&self, slot: f64) -> f64 {
        self.traffic.multiplier.value_at(slot * self.slot_s)
    }

    fn enqueue(&mut self, bs: usize, ue: usize, slot: u64, count: u64) {
        self.offered_bits[bs] += count as f64 * self.cfg.packet_bytes as f64 * 8.0;
        for _ in 0..count {
            if self.queues[bs].len() >= self.cfg.queue_limit {
                let s = &mut self.ue_stats[ue];
                s.packets_sent += 1;
                s.packets_lost += 1;
            } else {
                self.queues[bs].push_back(Packet {
                    ue: ue as u32,
                    enqueued: slot,
                    retries: 0,
                });
            }
        }
    }

    /// Slot at which the multiplier becomes positive again, if ever.
    fn resume_after_pause(&self, slot: f64) -> Option<f64> {
        let mut t = slot * self.slot_s;
        for _ in 0..64 {
            let n = self.traffic.multiplier.next_change_after(t)?;
            if self.traffic.multiplier.value_at(n) > 0.0 {
                return Some(n / self.slot_s);
            }
            t = n;
        }
        None
    }

    fn fire(&mut self, idx: usize, slot: u64) {
        if self.sources[idx].next >= self.sources[idx].stop {
            return;
        }
        let m = self.multiplier(self.sources[idx].next);
        if m <= 0.0 {
            if let Some(resume) = self.resume_after_pause(self.sources[idx].next) {
                self.sources[idx].next = resume.max(self.sources[idx].next + 1.0);
                self.schedule(idx);
            }
            return;
        }
        let bits = self.cfg.packet_bytes as f64 * 8.0;
        let slot_s = self.slot_s;
        let onoff = &self.traffic.onoff;
        let (bs, ue) = (self.sources[idx].bs, self.sources[idx].ue);
        match self.sources[idx].kind {
            TrafficType::Cbr => {
                let interval = bits / (self.sources[idx].rate_mbps * 1e6 * m) / slot_s;
                self.sources[idx].next += interval;
                self.enqueue(bs, ue, slot, 1);
            }
            TrafficType::Http => {
                let (on_mean, off_mean, shape) =
                    (onoff.http_on_mean_s, onoff.http_off_mean_s, onoff.http_pareto_shape);
                let src_next = self.sources[idx].next;
                if src_next >= self.sources[idx].on_until {
                    // next burst after an OFF gap
                    let off = Exp::new(1.0 / off_mean)
                        .map(|d| d.sample(&mut self.rng))
                        .unwrap_or(off_mean);
                    let on = draw_pareto(&mut self.rng, on_mean, shape);
                    let start = src_next + off / slot_s;
                    self.sources[idx].next = start;
                    self.sources[idx].on_until = start + on / slot_s;
                    self.schedule(idx);
                    return;
                }
                let peak = self.sources[idx].rate_mbps * (on_mean + off_mean) / on_mean;
                self.sources[idx].next += bits / (peak * 1e6 * m) / slot_s;
                self.enqueue(bs, ue, slot, 1);
            }
            TrafficType::Video => {
                let fps = onoff.video_fps;
                let frame_bytes = self.sources[idx].rate_mbps * 1e6 / 8.0 / fps * m;
                self.sources[idx].byte_credit += frame_bytes;
                let pkts = (self.sources[idx].byte_credit / self.cfg.packet_bytes as f64).floor();
                self.sources[idx].byte_credit -= pkts * self.cfg.packet_bytes as f64;
                self.sources[idx].next += 1.0 / fps / slot_s;
                self.enqueue(bs, ue, slot, pkts as u64);
            }
        }
        self.schedule(idx);
    }

    fn schedule(&mut self, idx: usize) {
        let s = &self.sources[idx];
        if s.next.is_finite() && s.next < s.stop {
            self.heap.push(Reverse((s.next.max(0.0).floor() as u64, idx)));
        }
    }

    /// Advance the run until `end_slot` (exclusive).
    pub fn run_until(&mut self, end_slot: u64) {
        let n_bs = self.topology.bss.len();
        while self.slot < end_slot {
            let slot = self.slot;
            while let Some(&Reverse((at, idx))) = self.heap.peek() {
                if at > slot {
                    break;
                }
                self.heap.pop();
                self.fire(idx, slot);
            }

            if self.queues.iter().all(|q| q.is_empty()) {
                let next = self
                    .heap
                    .peek()
                    .map_or(end_slot, |Reverse((at, _))| (*at).min(end_slot))
                    .max(slot + 1);
                let skip = (next - slot).min(u16::MAX as u64) as u16;
                for b in self.backoff.iter_mut() {
                    *b = b.saturating_sub(skip);
                }
                if let Some(tr) = self.trace.as_mut() {
                    tr.extend(std::iter::repeat_n(0, (next - slot) as usize));
                }
                self.slot = next;
                continue;
            }

            let links = &self.links;
            self.order.clear();
            self.order
                .extend((0..n_bs).filter(|&b| self.backoff[b] == 0 && !self.queues[b].is_empty()));
            self.order.shuffle(&mut self.rng);
            let (tx, deferred) = resolve_contention(&self.order, &links.sensed_mw, &links.cst_mw);
            for &d in &deferred {
                self.bs_stats[d].deferral_count += 1;
            }

            for b in 0..n_bs {
                if self.backoff[b] == 0 {
                    continue;
                }
                let heard: f64 = tx.iter().map(|&t| links.sensed_mw[t][b]).sum();
                if tx.is_empty() || heard < links.cst_mw[b] {
                    self.backoff[b] -= 1;
                }
            }

            for &i in &tx {
                self.bs_stats[i].airtime_busy_slots += 1;
                self.busy[i] += 1;
                for &h in &links.hearers[i] {
                    self.sensed[h][i] += 1;
                }
                let pkt = *self.queues[i].front().expect("transmitter has a packet");
                let g = &links.gain[pkt.ue as usize];
                let interference: f64 = tx.iter().filter(|&&j| j != i).map(|&j| g[j]).sum();
                let ok = g[i] >= self.sinr_lin * (self.noise_mw + interference);
                let stats = &mut self.ue_stats[pkt.ue as usize];
                if ok {
                    stats.packets_sent += 1;
                    stats.packets_delivered += 1;
                    stats.sum_latency_slots += slot + 1 - pkt.enqueued;
                    self.queues[i].pop_front();
                } else {
                    if interference > 0.0 {
                        self.bs_stats[i].collision_count += 1;
                    }
                    let head = self.queues[i].front_mut().expect("transmitter has a packet");
                    head.retries += 1;
                    if head.retries > self.cfg.retry_limit {
                        stats.packets_sent += 1;
                        stats.packets_lost += 1;
                        self.queues[i].pop_front();
                    }
                }
                self.backoff[i] = self.rng.random_range(0..=self.cfg.backoff_window);
            }
            if let Some(tr) = self.trace.as_mut() {
                tr.push(tx.len() as u16);
            }
            self.slot += 1;
        }
    }

    /// Agent report for the period since the previous sample.
    pub fn take_sample(&mut self) -> TelemetrySample {
        let span = (self.slot - self.sample_start).max(1) as f64;
        let secs = span * self.slot_s;
        let bss = self
            .topology
            .bss
            .iter()
            .enumerate()
            .map(|(b, bs)| BsSample {
                bs_id: bs.id,
                cpu_util: (self.busy[b] as f64 / span).clamp(0.0, 1.0),
                offered_load_mbps: self.offered_bits[b] / secs / 1e6,
                sensed_frames: self.sensed[b]
                    .iter()
                    .enumerate()
                    .filter(|&(_, &n)| n > 0)
                    .map(|(t, &n)| (self.topology.bss[t].id, n))
                    .collect(),
            })
            .collect();
        let ues = self
            .topology
            .ues
            .iter()
            .enumerate()
            .map(|(u, ue)| {
                let b = self.topology.bs_index(ue.serving_bs).unwrap_or(0);
                UeSample {
                    ue_id: ue.id,
                    serving_bs: ue.serving_bs,
                    rssi_dbm: self.links.rssi_map[b][u],
                    rx_packets: self.ue_stats[u].packets_delivered,
                    tx_packets: self.ue_stats[u].packets_sent,
                }
            })
            .collect();
        self.sample_start = self.slot;
        self.offered_bits.iter_mut().for_each(|x| *x = 0.0);
        self.busy.iter_mut().for_each(|x| *x = 0);
        self.sensed.iter_mut().flatten().for_each(|x| *x = 0);
        TelemetrySample {
            t_s: self.now_s(),
            bss,
            ues,
        }
    }

    /// Run to `end_slot`, emitting one telemetry sample every
    /// `sample_period_slots`.
    pub fn run_sampled(&mut self, end_slot: u64, sample_period_slots: u64) -> Vec<TelemetrySample> {
        let period = sample_period_slots.max(1);
        let mut out = Vec::new();
        while self.slot < end_slot {
            let next = ((self.slot / period) + 1) * period;
            self.run_until(next.min(end_slot));
            if self.slot % period == 0 {
                out.push(self.take_sample());
            }
        }
        out
    }

    pub fn take_trace(&mut self) -> Option<Vec<u16>> {
        self.trace.take()
    }

    /// Close the run. Packets still queued are reported as pending.
    pub fn finish(mut self) -> SimResult {
        for q in &self.queues {
            for p in q {
                self.ue_stats[p.ue as usize].packets_pending += 1;
            }
        }
        SimResult {
            ues: self.ue_stats,
            bss: self.bs_stats,
            duration_slots: self.slot,
            slot_duration_us: self.cfg.slot_duration_us(),
            packet_bytes: self.cfg.packet_bytes,
            rssi_map: self.links.rssi_map,
        }
    }
}

fn draw_pareto(rng: &mut SimRng, mean: f64, shape: f64) -> f64 {
    if shape <= 1.0 {
        return mean;
    }
    let scale = mean * (shape - 1.0) / shape;
    Pareto::new(scale, shape).map(|d| d.sample(rng)).unwrap_or(mean)
}

/// Run with the default PHY/MAC parameters.
pub fn simulate(
    topology: &Topology,
    traffic: &TrafficProfile,
    duration_slots: u64,
    seed: u64,
) -> Result<SimResult> {
    simulate_with(&SimConfig::default(), topology, traffic, duration_slots, seed)
}

pub fn simulate_with(
    cfg: &SimConfig,
    topology: &Topology,
    traffic: &TrafficProfile,
    duration_slots: u64,
    seed: u64,
) -> Result<SimResult> {
    if duration_slots == 0 {
        return Err(invalid("duration must be at least one slot"));
    }
    let mut sim = Simulation::new(cfg, topology, traffic, seed)?;
    sim.run_until(duration_slots);
    Ok(sim.finish())
}

/// Like [`simulate_with`] but also returns the number of concurrent
/// transmitters in every slot.
pub fn simulate_traced(
    cfg: &SimConfig,
    topology: &Topology,
    traffic: &TrafficProfile,
    duration_slots: u64,
    seed: u64,
) -> Result<(SimResult, Vec<u16>)> {
    if duration_slots == 0 {
        return Err(invalid("duration must be at least one slot"));
    }
    let mut sim = Simulation::new(cfg, topology, traffic, seed)?;
    sim.enable_trace();
    sim.run_until(duration_slots);
    let trace = sim.take_trace().unwrap_or_default();
    Ok((sim.finish(), trace))
}

/// Decide which contenders transmit in one slot. `order` is the contention
/// order; `sensed_mw[i][j]` is the power BS `j` receives from BS `i`.
/// Returns transmitters and the deferring contenders.
pub fn resolve_contention(
    order: &[usize],
    sensed_mw: &[Vec<f64>],
    cst_mw: &[f64],
) -> (Vec<usize>, Vec<usize>) {
    let mut tx: Vec<usize> = Vec::with_capacity(order.len());
    let mut deferred = Vec::new();
    for &c in order {
        let heard: f64 = tx.iter().map(|&t| sensed_mw[t][c]).sum();
        if !tx.is_empty() && heard >= cst_mw[c] {
            deferred.push(c);
        } else {
            tx.push(c);
        }
    }
    (tx, deferred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::topology::{build_topology, BaseStation, Position, UserEquipment};
    use crate::netsim::traffic::{Flow, MultiplierCurve, TrafficMix};

    fn two_bs(gap_m: f64, radio: RadioConfig) -> Topology {
        let bss = (0..2)
            .map(|i| BaseStation {
                id: i,
                position: Position {
                    x: i as f64 * gap_m,
                    y: 0.0,
                },
                radio,
            })
            .collect();
        let ues = (0..2)
            .map(|i| UserEquipment {
                id: i,
                position: Position {
                    x: i as f64 * gap_m,
                    y: 3.0,
                },
                serving_bs: i,
            })
            .collect();
        Topology { bss, ues, seed: 0 }
    }

    fn saturating(topo: &Topology, mbps: f64) -> TrafficProfile {
        let mut p = TrafficProfile::empty();
        p.flows = topo
            .ues
            .iter()
            .map(|u| Flow::new(u.id, TrafficType::Cbr, mbps))
            .collect();
        p
    }

    #[test]
    fn resolved_packets_are_delivered_or_lost() {
        let topo = build_topology(9, (10, 15), 20.0, 3).unwrap();
        let traffic =
            TrafficProfile::for_topology(&topo, 8.0, &TrafficMix::default(), 3).unwrap();
        let r = simulate(&topo, &traffic, 4000, 3).unwrap();
        assert!(r.total_sent() > 0);
        for u in &r.ues {
            assert_eq!(u.packets_sent, u.packets_delivered + u.packets_lost);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let topo = build_topology(4, (5, 8), 20.0, 9).unwrap();
        let traffic =
            TrafficProfile::for_topology(&topo, 6.0, &TrafficMix::default(), 9).unwrap();
        let a = simulate(&topo, &traffic, 2000, 11).unwrap();
        let b = simulate(&topo, &traffic, 2000, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate(&topo, &traffic, 2000, 12).unwrap();
        assert_ne!(a.ues, c.ues);
    }

    #[test]
    fn lone_bs_under_light_load_loses_nothing() {
        let mut topo = two_bs(40.0, RadioConfig::default());
        topo.bss.truncate(1);
        topo.ues.truncate(1);
        let traffic = saturating(&topo, 2.0);
        let r = simulate(&topo, &traffic, 10_000, 1).unwrap();
        assert_eq!(r.total_lost(), 0);
        let cfg = SimConfig::default();
        let offered = 2e6 * r.duration_s() / (cfg.packet_bytes as f64 * 8.0);
        let got = r.total_delivered() as f64;
        assert!((got - offered).abs() <= 2.0, "{got} vs {offered}");
    }

    #[test]
    fn co_located_bss_never_overlap() {
        let topo = two_bs(1.0, RadioConfig::new(-82.0, 20.0));
        let traffic = saturating(&topo, 50.0);
        let (r, trace) =
            simulate_traced(&SimConfig::default(), &topo, &traffic, 5000, 2).unwrap();
        assert!(trace.iter().all(|&n| n <= 1));
        assert!(r.bss.iter().map(|b| b.deferral_count).sum::<u64>() > 0);
    }

    #[test]
    fn raising_cst_never_reduces_concurrency() {
        let topo = two_bs(20.0, RadioConfig::default());
        let traffic = saturating(&topo, 50.0);
        let cfg = SimConfig::default();
        let mut prev = -1.0;
        let mut first = None;
        for cst in [-82.0, -77.0, -72.0, -67.0, -62.0] {
            let t = topo.with_radio(RadioConfig::new(cst, 20.0));
            let (_, trace) = simulate_traced(&cfg, &t, &traffic, 5000, 4).unwrap();
            let busy: Vec<_> = trace.iter().filter(|&&n| n > 0).collect();
            let mean = busy.iter().map(|&&n| n as f64).sum::<f64>() / busy.len() as f64;
            assert!(mean >= prev - 1e-9, "cst {cst}: {mean} < {prev}");
            first.get_or_insert(mean);
            prev = mean;
        }
        // -65.5 dBm between neighbours: heard at -82, ignored at -62
        assert_eq!(first, Some(1.0));
        assert!(prev > 1.0);
    }

    #[test]
    fn tpc_step_shifts_rssi_by_the_same_step() {
        let topo = build_topology(4, (5, 5), 20.0, 5).unwrap();
        let lo = rssi_matrix(&topo.with_radio(RadioConfig::new(-72.0, 12.0)));
        let hi = rssi_matrix(&topo.with_radio(RadioConfig::new(-72.0, 18.0)));
        for (a, b) in lo.iter().flatten().zip(hi.iter().flatten()) {
            assert!((b - a - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn more_load_more_throughput_until_saturation() {
        let topo = build_topology(4, (6, 6), 20.0, 8).unwrap();
        let cfg = SimConfig {
            sinr_threshold_db: 10.0,
            ..Default::default()
        };
        let mut prev = 0;
        for load in [1.0, 2.0, 4.0] {
            let traffic =
                TrafficProfile::for_topology(&topo, load, &TrafficMix::default(), 8).unwrap();
            let r = simulate_with(&cfg, &topo, &traffic, 20_000, 8).unwrap();
            assert!(r.total_delivered() > prev);
            prev = r.total_delivered();
        }
    }

    #[test]
    fn empty_traffic_sends_nothing() {
        let topo = build_topology(2, (3, 3), 20.0, 1).unwrap();
        let r = simulate(&topo, &TrafficProfile::empty(), 1000, 1).unwrap();
        assert_eq!(r.total_sent(), 0);
        assert_eq!(r.duration_slots, 1000);
        assert!(simulate(&topo, &TrafficProfile::empty(), 0, 1).is_err());
    }

    #[test]
    fn flows_stop_at_their_window() {
        let topo = two_bs(40.0, RadioConfig::default());
        let mut traffic = saturating(&topo, 2.0);
        for f in &mut traffic.flows {
            f.stop_s = Some(0.5);
        }
        let cfg = SimConfig::default();
        let mut sim = Simulation::new(&cfg, &topo, &traffic, 1).unwrap();
        let samples = sim.run_sampled(cfg.slots_for_seconds(1.0), cfg.slots_for_seconds(0.1));
        assert_eq!(samples.len(), 10);
        assert!(samples[2].bss[0].offered_load_mbps > 1.0);
        assert!(samples[7..].iter().all(|s| s.bss[0].offered_load_mbps == 0.0));
    }

    #[test]
    fn zero_multiplier_pauses_sources() {
        let topo = two_bs(40.0, RadioConfig::default());
        let mut traffic = saturating(&topo, 2.0);
        traffic.multiplier = MultiplierCurve::piecewise(vec![(0.0, 1.0), (0.2, 0.0), (0.6, 1.0)], None);
        let cfg = SimConfig::default();
        let mut sim = Simulation::new(&cfg, &topo, &traffic, 1).unwrap();
        let s = sim.run_sampled(cfg.slots_for_seconds(1.0), cfg.slots_for_seconds(0.1));
        assert_eq!(s[3].bss[0].offered_load_mbps, 0.0);
        assert!(s[8].bss[0].offered_load_mbps > 1.0);
    }

    #[test]
    fn telemetry_counters_accumulate() {
        let topo = build_topology(4, (4, 4), 20.0, 6).unwrap();
        let traffic =
            TrafficProfile::for_topology(&topo, 10.0, &TrafficMix::default(), 6).unwrap();
        let cfg = SimConfig::default();
        let mut sim = Simulation::new(&cfg, &topo, &traffic, 6).unwrap();
        let samples = sim.run_sampled(cfg.slots_for_seconds(0.5), cfg.slots_for_seconds(0.1));
        for w in samples.windows(2) {
            assert!(w[1].t_s > w[0].t_s);
            for (a, b) in w[0].ues.iter().zip(&w[1].ues) {
                assert!(b.rx_packets >= a.rx_packets);
                assert!(b.tx_packets >= a.tx_packets);
            }
        }
        for s in &samples {
            assert!(s.bss.iter().all(|b| (0.0..=1.0).contains(&b.cpu_util)));
        }
        // neighbours 20 m apart at 20 dBm are heard above -82 dBm
        assert!(samples.iter().any(|s| !s.bss[0].sensed_frames.is_empty()));
    }

    #[test]
    fn radio_change_mid_run_takes_effect() {
        let topo = build_topology(4, (4, 4), 20.0, 6).unwrap();
        let traffic = TrafficProfile::empty();
        let cfg = SimConfig::default();
        let mut sim = Simulation::new(&cfg, &topo, &traffic, 6).unwrap();
        sim.run_until(100);
        let before = sim.take_sample().ues[0].rssi_dbm;
        sim.set_radio(RadioConfig::new(-72.0, 10.0)).unwrap();
        let after = sim.take_sample().ues[0].rssi_dbm;
        assert!((before - after - 10.0).abs() < 1e-9);
        assert!(sim.set_radio(RadioConfig::new(-90.0, 10.0)).is_err());
    }
}
