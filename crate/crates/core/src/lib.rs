//! Slotted SINR network simulation with heterogeneous transmission powers.
//!
//! - [`model`]: geometry, powers, ranges and the directed communication graph.
//! - [`engine`]: physical-layer resolution and the deterministic slot loop.
//! - [`analysis`]: interference certificates and closed-form bounds.
//! - [`broadcast`]: local-broadcasting protocols and their verifier.
//! - [`coloring`]: distributed node coloring and MIS.
//! - [`harness`]: topology generators, experiments and reports.

pub mod analysis;
pub mod broadcast;
pub mod coloring;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;

pub use error::{Error, Result};
