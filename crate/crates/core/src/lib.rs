//! Synchronization analysis for networks of identical compartments built
//! from cocoercive species blocks and coupled by diffusion.

pub mod error;
pub mod graph;
pub mod metrics;
pub mod numerics;
pub mod passivity;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
