//! Conditional tabular GAN for synthetic flow records.
//!
//! Continuous columns use mode-specific normalization, categorical columns
//! are one-hot. The generator is conditioned on one categorical value per
//! row, drawn by training-by-sampling.

mod model;
pub mod nn;
mod normalizer;
mod schema;

pub use model::{
    discriminator_objective, gan_value, generator_objective, EpochLog, GanHyper, GanModel,
};
pub use normalizer::{fit_em, fit_normalizer, fit_normalizer_bic, EmFit, ModeNormalizer, STD_FLOOR};
pub use schema::{
    flow_schema, records_from_network, Cell, Column, ColumnKind, CondSampler, CondVector, FlowRecord,
    HourBucket, Row, Schema,
};

use crate::error::Result;

/// Train on flow records from a network with `num_bs` BSs.
pub fn train_flows(records: &[FlowRecord], num_bs: usize, hyper: &GanHyper, seed: u64) -> Result<GanModel> {
    let schema = flow_schema(num_bs);
    let rows = records
        .iter()
        .map(|r| r.to_row(&schema))
        .collect::<Result<Vec<_>>>()?;
    GanModel::train(&rows, &schema, hyper, seed)
}

/// Generate flow records, optionally forcing one categorical value, e.g.
/// `Some(("traffic_type", "Video"))`.
pub fn generate_flows(
    model: &GanModel,
    n: usize,
    condition: Option<(&str, &str)>,
    seed: u64,
) -> Result<Vec<FlowRecord>> {
    model
        .generate(n, condition, seed)?
        .iter()
        .map(|row| FlowRecord::from_row(row, &model.schema))
        .collect()
}
