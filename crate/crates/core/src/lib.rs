//! Risk-sensitive reinforcement learning with risk measures induced by convex
//! scoring functions.
//!
//! A risk objective `rho(Y) = inf_u h(E[f(Y, u)], u)` is optimized over
//! policies by augmenting the state with the running negative cost `y` and
//! learning an actor and a critic that also take the auxiliary variable `u`
//! as input. The crate contains the scoring catalog, environments, the
//! networks, the training loop, an exact dynamic-programming oracle for
//! tabular problems and evaluation/export utilities.

pub mod error;
pub mod rng;
pub mod scoring;
pub mod env;
pub mod net;
pub mod algo;
pub mod oracle;
pub mod eval;
pub mod config;
pub mod cli;

pub use error::{Error, Result};
