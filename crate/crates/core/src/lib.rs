//! What-if analysis for digital-twin-driven management of dense WLANs.
//!
//! Layers, bottom-up: [`netsim`] is the physical twin, [`dtconnect`] moves its
//! telemetry into the [`twingraph`], [`tabgan`] learns flow records to feed the
//! [`scenario`] maker, [`whatif`] scores candidate radio configurations and
//! [`services`] proposes them. [`harness`] runs the experiments.

pub mod dtconnect;
pub mod error;
pub mod harness;
pub mod netsim;
pub mod report;
pub mod par;
pub mod rng;
pub mod scenario;
pub mod services;
pub mod tabgan;
pub mod twingraph;
pub mod whatif;

pub use error::{Error, Result};
