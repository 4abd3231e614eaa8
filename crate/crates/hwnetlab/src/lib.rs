//! Laboratory for multiclass multi-pool Markovian queueing networks in the
//! Halfin-Whitt regime.
//!
//! The crate computes the static objects of a critically loaded parallel
//! server network (fluid equilibrium, the tree routing map `Phi`, drift
//! matrices `B1`/`B2`, spare capacity `rho`), simulates the prelimit CTMC
//! under scheduling policies and the limiting controlled diffusion, and
//! numerically certifies Foster-Lyapunov drift inequalities, the
//! transience test, exponential tails, the stationary idleness identity,
//! and the interchange of limits.
//!
//! Entry points:
//! - [`config`]: parse a network description (TOML or JSON).
//! - [`statics::StaticData::compute`]: all static objects at once.
//! - [`prelimit::simulate_ctmc`] / [`diffusion::simulate_sde`]: simulation.
//! - [`lyapunov`]: drift and transience certificates.
//! - [`experiments`]: statistical experiments tying the two together.

pub mod config;
pub mod diffusion;
pub mod experiments;
pub mod flow;
pub mod lyapunov;
pub mod network;
pub mod policies;
pub mod prelimit;
pub mod statics;
pub mod stats;
