use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::netsim::{Topology, TrafficProfile, TrafficType};
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical { values: Vec<String> },
    /// Generated values are clamped to `lower` when set.
    Continuous { lower: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

impl Column {
    pub fn categorical(name: &str, values: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical {
                values: values.iter().map(|v| v.to_string()).collect(),
            },
        }
    }

    pub fn continuous(name: &str, lower: Option<f64>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Continuous { lower },
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        match &self.kind {
            ColumnKind::Categorical { values } => Some(values.len()),
            ColumnKind::Continuous { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Cat(usize),
    Num(f64),
}

pub type Row = Vec<Cell>;

impl Schema {
    pub fn new(columns: Vec<Column>) -> Self {
        Self { columns }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Schema indices of the categorical columns.
    pub fn categorical(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].cardinality().is_some())
            .collect()
    }

    pub fn cond_len(&self) -> usize {
        self.columns.iter().filter_map(Column::cardinality).sum()
    }

    /// Resolve `(column name, value)` to `(schema index, value index)`.
    pub fn resolve(&self, column: &str, value: &str) -> Result<(usize, usize)> {
        let c = self
            .column_index(column)
            .ok_or_else(|| invalid(format!("unknown column {column}")))?;
        match &self.columns[c].kind {
            ColumnKind::Categorical { values } => values
                .iter()
                .position(|v| v == value)
                .map(|v| (c, v))
                .ok_or_else(|| invalid(format!("{value} is not a value of {column}"))),
            ColumnKind::Continuous { .. } => Err(invalid(format!("{column} is not categorical"))),
        }
    }

    pub fn validate_row(&self, row: &[Cell]) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(invalid(format!(
                "row has {} cells, schema has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        for (cell, col) in row.iter().zip(&self.columns) {
            let ok = match (cell, &col.kind) {
                (Cell::Cat(v), ColumnKind::Categorical { values }) => *v < values.len(),
                (Cell::Num(x), ColumnKind::Continuous { .. }) => x.is_finite(),
                _ => false,
            };
            if !ok {
                return Err(invalid(format!("bad cell {cell:?} in column {}", col.name)));
            }
        }
        Ok(())
    }
}

/// One-hot condition over the concatenated categorical blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CondVector {
    /// Schema index of the conditioned column.
    pub column: usize,
    pub value: usize,
    /// Position of the set bit.
    pub hot: usize,
    pub len: usize,
}

impl CondVector {
    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[self.hot] = 1.0;
        v
    }

    pub fn popcount(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CondColumn {
    column: usize,
    offset: usize,
    counts: Vec<u64>,
}

/// Value counts of the training data per categorical column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CondSampler {
    columns: Vec<CondColumn>,
    len: usize,
}

fn pick(weights: &[f64], rng: &mut SimRng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

impl CondSampler {
    pub fn from_rows(schema: &Schema, rows: &[Row]) -> Result<Self> {
        let mut columns = Vec::new();
        let mut offset = 0;
        for c in schema.categorical() {
            let card = schema.columns[c].cardinality().unwrap_or(0);
            let mut counts = vec![0u64; card];
            for r in rows {
                if let Cell::Cat(v) = r[c] {
                    counts[v] += 1;
                }
            }
            columns.push(CondColumn {
                column: c,
                offset,
                counts,
            });
            offset += card;
        }
        if columns.is_empty() {
            return Err(invalid("conditioning needs at least one categorical column"));
        }
        Ok(Self {
            columns,
            len: offset,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn counts(&self, column: usize) -> Option<&[u64]> {
        self.columns
            .iter()
            .find(|c| c.column == column)
            .map(|c| c.counts.as_slice())
    }

    pub fn make(&self, column: usize, value: usize) -> Result<CondVector> {
        let c = self
            .columns
            .iter()
            .find(|c| c.column == column)
            .ok_or_else(|| invalid(format!("column {column} is not categorical")))?;
        if value >= c.counts.len() {
            return Err(invalid(format!("value {value} out of range for column {column}")));
        }
        Ok(CondVector {
            column,
            value,
            hot: c.offset + value,
            len: self.len,
        })
    }

    fn draw(&self, rng: &mut SimRng, weight: impl Fn(u64) -> f64) -> CondVector {
        let c = &self.columns[rng.random_range(0..self.columns.len())];
        let w: Vec<f64> = c.counts.iter().map(|&n| weight(n)).collect();
        let value = if w.iter().all(|&x| x == 0.0) {
            rng.random_range(0..c.counts.len())
        } else {
            pick(&w, rng)
        };
        CondVector {
            column: c.column,
            value,
            hot: c.offset + value,
            len: self.len,
        }
    }

    /// Training-by-sampling: uniform column, value by log-frequency.
    pub fn sample_training(&self, rng: &mut SimRng) -> CondVector {
        self.draw(rng, |n| ((n + 1) as f64).ln())
    }

    /// Uniform column, value by observed frequency.
    pub fn sample_original(&self, rng: &mut SimRng) -> CondVector {
        self.draw(rng, |n| n as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HourBucket {
    Night,
    Morning,
    Day,
    Evening,
}

impl HourBucket {
    pub const ALL: [HourBucket; 4] = [
        HourBucket::Night,
        HourBucket::Morning,
        HourBucket::Day,
        HourBucket::Evening,
    ];

    pub fn name(self) -> &'static str {
        match self {
            HourBucket::Night => "night",
            HourBucket::Morning => "morning",
            HourBucket::Day => "day",
            HourBucket::Evening => "evening",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub bs_id: u32,
    pub traffic_type: TrafficType,
    pub offered_rate_mbps: f64,
    pub distance_m: f64,
    pub hour_bucket: HourBucket,
}

const TRAFFIC_NAMES: [&str; 3] = ["CBR", "HTTP", "Video"];

pub fn flow_schema(num_bs: usize) -> Schema {
    let ids: Vec<String> = (0..num_bs.max(1)).map(|i| i.to_string()).collect();
    let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
    Schema::new(vec![
        Column::categorical("bs_id", &ids),
        Column::categorical("traffic_type", &TRAFFIC_NAMES),
        Column::continuous("offered_rate_mbps", Some(0.0)),
        // path loss is clamped at 1 m anyway
        Column::continuous("distance_m", Some(1.0)),
        Column::categorical("hour_bucket", &["night", "morning", "day", "evening"]),
    ])
}

impl FlowRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.offered_rate_mbps.is_finite() && self.offered_rate_mbps >= 0.0) {
            return Err(invalid("offered rate must be non-negative"));
        }
        if !(self.distance_m.is_finite() && self.distance_m > 0.0) {
            return Err(invalid("distance must be positive"));
        }
        Ok(())
    }

    pub fn to_row(&self, schema: &Schema) -> Result<Row> {
        self.validate()?;
        let card = schema.columns[0].cardinality().unwrap_or(0);
        if self.bs_id as usize >= card {
            return Err(invalid(format!("bs_id {} outside the schema", self.bs_id)));
        }
        Ok(vec![
            Cell::Cat(self.bs_id as usize),
            Cell::Cat(self.traffic_type.index()),
            Cell::Num(self.offered_rate_mbps),
            Cell::Num(self.distance_m),
            Cell::Cat(self.hour_bucket.index()),
        ])
    }

    pub fn from_row(row: &[Cell], schema: &Schema) -> Result<Self> {
        schema.validate_row(row)?;
        match row {
            [Cell::Cat(bs), Cell::Cat(tt), Cell::Num(rate), Cell::Num(dist), Cell::Cat(hb)] => {
                let r = Self {
                    bs_id: *bs as u32,
                    traffic_type: TrafficType::ALL[*tt],
                    offered_rate_mbps: *rate,
                    distance_m: *dist,
                    hour_bucket: HourBucket::ALL[*hb],
                };
                r.validate()?;
                Ok(r)
            }
            _ => Err(invalid("row does not match the flow schema")),
        }
    }
}

/// One record per flow of `traffic`, as the twin observes it during `hour`.
pub fn records_from_network(
    topology: &Topology,
    traffic: &TrafficProfile,
    hour: HourBucket,
) -> Vec<FlowRecord> {
    traffic
        .flows
        .iter()
        .filter_map(|f| {
            let ue = &topology.ues[topology.ue_index(f.ue_id)?];
            let bs = &topology.bss[topology.bs_index(ue.serving_bs)?];
            Some(FlowRecord {
                bs_id: bs.id,
                traffic_type: f.traffic_type,
                offered_rate_mbps: f.offered_rate_mbps,
                distance_m: bs.position.distance(&ue.position).max(1.0),
                hour_bucket: hour,
            })
        })
        .collect()
}
