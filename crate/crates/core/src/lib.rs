//! Near-field large-scale MIMO channel simulator.

pub mod error;
pub mod geometry;
pub mod channel;
pub mod scattering;
pub mod statistics;
pub mod harness;

pub use error::{Error, Result};
