use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{derive_seed, rng_from};

pub const CST_RANGE_DBM: (f64, f64) = (-82.0, -62.0);
pub const TX_POWER_RANGE_DBM: (f64, f64) = (10.0, 20.0);

/// Carrier-sense threshold and transmit powers of one base station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub cst_dbm: f64,
    pub tpc_dbm: f64,
    pub ue_tx_dbm: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            cst_dbm: -72.0,
            tpc_dbm: 20.0,
            ue_tx_dbm: 15.0,
        }
    }
}

impl RadioConfig {
    pub fn new(cst_dbm: f64, tpc_dbm: f64) -> Self {
        Self {
            cst_dbm,
            tpc_dbm,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64)| v.is_finite() && v >= lo && v <= hi;
        if !in_range(self.cst_dbm, CST_RANGE_DBM) {
            return Err(invalid(format!("cst_dbm {} outside [-82, -62]", self.cst_dbm)));
        }
        if !in_range(self.tpc_dbm, TX_POWER_RANGE_DBM) {
            return Err(invalid(format!("tpc_dbm {} outside [10, 20]", self.tpc_dbm)));
        }
        if !in_range(self.ue_tx_dbm, TX_POWER_RANGE_DBM) {
            return Err(invalid(format!("ue_tx_dbm {} outside [10, 20]", self.ue_tx_dbm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseStation {
    pub id: u32,
    pub position: Position,
    pub radio: RadioConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEquipment {
    pub id: u32,
    pub position: Position,
    pub serving_bs: u32,
}

/// Placement of base stations and user equipment. All BSs share one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub bss: Vec<BaseStation>,
    pub ues: Vec<UserEquipment>,
    pub seed: u64,
}

impl Topology {
    pub fn bs_index(&self, id: u32) -> Option<usize> {
        self.bss.iter().position(|b| b.id == id)
    }

    pub fn ue_index(&self, id: u32) -> Option<usize> {
        self.ues.iter().position(|u| u.id == id)
    }

    pub fn ues_of(&self, bs_id: u32) -> impl Iterator<Item = &UserEquipment> {
        self.ues.iter().filter(move |u| u.serving_bs == bs_id)
    }

    pub fn next_ue_id(&self) -> u32 {
        self.ues.iter().map(|u| u.id + 1).max().unwrap_or(0)
    }

    /// Every UE must reference an existing BS and every radio must be in range.
    pub fn validate(&self) -> Result<()> {
        if self.bss.is_empty() {
            return Err(invalid("topology has no base stations"));
        }
        for bs in &self.bss {
            bs.radio.validate()?;
        }
        for ue in &self.ues {
            if self.bs_index(ue.serving_bs).is_none() {
                return Err(invalid(format!(
                    "UE {} references unknown BS {}",
                    ue.id, ue.serving_bs
                )));
            }
        }
        Ok(())
    }

    /// Same placement with every BS switched to `radio`.
    pub fn with_radio(&self, radio: RadioConfig) -> Topology {
        let mut t = self.clone();
        for bs in &mut t.bss {
            bs.radio = radio;
        }
        t
    }

    /// Add a UE at `distance_m` from `bs_id`, at a deterministic bearing.
    pub fn add_ue_at(&mut self, bs_id: u32, distance_m: f64, bearing_rad: f64) -> Result<u32> {
        let idx = self
            .bs_index(bs_id)
            .ok_or_else(|| invalid(format!("unknown BS {bs_id}")))?;
        let c = self.bss[idx].position;
        let id = self.next_ue_id();
        self.ues.push(UserEquipment {
            id,
            position: Position {
                x: c.x + distance_m * bearing_rad.cos(),
                y: c.y + distance_m * bearing_rad.sin(),
            },
            serving_bs: bs_id,
        });
        Ok(id)
    }
}

/// BSs on a square grid with `spacing_m` pitch; each gets a uniform UE count in
/// `ue_per_bs` and its UEs are dropped uniformly in a disc of radius
/// `spacing_m`, so neighbouring cells always overlap.
pub fn build_topology(
    num_bs: usize,
    ue_per_bs: (usize, usize),
    spacing_m: f64,
    seed: u64,
) -> Result<Topology> {
    if num_bs == 0 {
        return Err(invalid("num_bs must be at least 1"));
    }
    if !(spacing_m.is_finite() && spacing_m > 0.0) {
        return Err(invalid(format!("spacing must be positive, got {spacing_m}")));
    }
    let (lo, hi) = ue_per_bs;
    if lo > hi {
        return Err(invalid(format!("empty UE range [{lo}, {hi}]")));
    }
    let mut rng = rng_from(derive_seed(seed, &[0x70F0]));
    let cols = (num_bs as f64).sqrt().ceil() as usize;
    let mut bss = Vec::with_capacity(num_bs);
    let mut ues = Vec::new();
    for i in 0..num_bs {
        let center = Position {
            x: (i % cols) as f64 * spacing_m,
            y: (i / cols) as f64 * spacing_m,
        };
        bss.push(BaseStation {
            id: i as u32,
            position: center,
            radio: RadioConfig::default(),
        });
        let count = rng.random_range(lo..=hi);
        for _ in 0..count {
            let r = spacing_m * rng.random::<f64>().sqrt();
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            ues.push(UserEquipment {
                id: ues.len() as u32,
                position: Position {
                    x: center.x + r * theta.cos(),
                    y: center.y + r * theta.sin(),
                },
                serving_bs: i as u32,
            });
        }
    }
    Ok(Topology { bss, ues, seed })
}
