//! Monte Carlo and exact-enumeration laboratory for directed polymers in
//! random environment, their m-tree cascade approximations and classical
//! spin glasses, with statistical checks of stochastic-order inequalities.

pub mod env;
pub mod cascade;
pub mod error;
pub mod gaussian;
pub mod geometry;
pub mod lattice;
pub mod math;
pub mod oracle;
pub mod orders;
pub mod peacock;
pub mod rng;
pub mod scaling;
pub mod spinglass;
pub mod stats;

pub use error::{Error, Result};
