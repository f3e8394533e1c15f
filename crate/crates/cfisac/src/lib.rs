//! Terahertz cell-free integrated sensing and communication laboratory.
//!
//! The crate covers the physical layer (geometry, channels, SINR, Fisher
//! information), a small interior-point conic solver, the BCD/SCA/SDR design
//! loop, heuristic and multicell baselines, a graph-transformer encoder with
//! its own reverse-mode tape, a multi-agent PPO trainer and the experiment
//! harness used by the `cfisac` command-line tool.

pub mod error;
pub mod par;
pub mod params;
pub mod rng;

pub mod channel;
pub mod fim;
pub mod scenario;
pub mod signal;

pub mod conic;

pub mod b2s;
pub mod baselines;
pub mod dolg;
pub mod gtn;
pub mod harness;

pub use error::{Error, Result};
pub use params::SystemParams;
