//! Stroboscopic back-action-evading measurement of a collective spin oscillator.
//!
//! [`physics`] derives the atom–light coupling, [`analytics`] holds the closed
//! forms, [`sim`] propagates Gaussian trajectories, [`estimation`] turns
//! records into squeezing metrics and [`harness`] runs scenario sweeps.

pub mod analytics;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod physics;
pub mod sim;

pub use error::{Error, Result};
