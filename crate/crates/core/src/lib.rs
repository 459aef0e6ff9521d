//! Event-driven simulation of Kac's one-dimensional N-particle collision model.
//!
//! The crate is organised bottom-up:
//!
//! * [`event_stream`] realises the Poisson random measures that drive every
//!   collision, reproducibly from a seed and a replica index.
//! * [`dynamics`] holds the particle states and the three equivalent collision
//!   maps (rotation, radial and energy forms).
//! * [`coupling`] runs two systems on one shared event stream and checks the
//!   exponential contraction of the energy coupling cost.
//! * [`mean_field`] is the particle approximation of the nonlinear limit
//!   process, driven by empirical quantiles.
//! * [`stats`] contains the Monte Carlo and fitting toolkit.
//! * [`experiment`] wires everything into configurable, reproducible
//!   experiments with CSV and JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod event_stream;
pub mod experiment;
pub mod mean_field;
pub mod replicas;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
