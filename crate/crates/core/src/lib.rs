//! Discrete-event stochastic kinetic modelling for agent-based road traffic.
//!
//! The crate is organised bottom-up:
//!
//! - [`kinetic`]: event productions, rate laws, Gillespie and uniformized
//!   discrete-time simulation, path probabilities.
//! - [`traffic`]: the road-network instantiation (vehicles as agents,
//!   locations as species), probe observation model and trip scoring.
//! - [`inference`]: particle filter, ancestral-line smoother and rate learning.
//! - [`planner`]: EM policy optimisation from a particle belief.
//! - [`oracles`]: exact small-instance references used for verification.
//! - [`scenario`]: file formats, the SynthTown generator, ground-truth runs
//!   and evaluation metrics.

pub mod error;
pub mod inference;
pub mod kinetic;
pub mod oracles;
pub mod planner;
pub mod rng;
pub mod scenario;
pub mod traffic;

pub use error::{Error, Result};

/// Engine version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
