//! Discrete-event simulation of gated single-photon detectors behind a
//! trigger-disabling clock manager, with self-blinding analysis of the keys
//! produced by a two-detector receiver.

pub mod acquisition;
pub mod cli;
pub mod clock_manager;
pub mod error;
pub mod output;
pub mod photon_source;
pub mod rng;
pub mod scenario;
pub mod security;
pub mod spad;

pub use error::{Error, Result};
