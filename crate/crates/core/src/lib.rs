//! Photon-level simulation of OAM-encoded BB84 over an air-core fiber, with
//! decoy-state key-rate analysis.

pub mod channel;
pub mod decoy;
pub mod error;
pub mod montecarlo;
pub mod optics;
pub mod scenario;
pub mod statespace;

pub use error::{Error, Result};
