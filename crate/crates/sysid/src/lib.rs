//! On-track tire parameter identification for a single-track vehicle model.
//!
//! The pipeline: drive a ground-truth vehicle around a waypoint track with
//! Pure Pursuit ([`sim`]), filter and augment the log into one-step error
//! targets ([`pipeline`]), train a small residual network on the nominal
//! model's mismatch ([`net`]), generate virtual steady-state data with the
//! corrected model, and refit Pacejka tire coefficients, iterating until
//! the curves settle ([`ident`]). A direct NLS baseline and a noise-sweep
//! benchmark live in [`ident`] and the `sysid` binary.

pub mod config;
pub mod error;
pub mod filter;
pub mod ident;
pub mod model;
pub mod net;
pub mod pipeline;
pub mod run;
pub mod sim;
pub mod solver;
pub mod track;

pub use error::{Result, SysidError};
