//! Real-time dynamics of a spin-boson model on the unfolded Keldysh contour.
//!
//! Two estimators of `⟨O(τ)⟩` are provided: a bare Dyson-series Monte Carlo
//! ([`dyson`]) and the inchworm integro-differential solver ([`inchworm`]),
//! which sums only connected diagrams and reuses previously computed
//! propagators on a grid.

pub mod bath;
pub mod combinatorics;
pub mod contour;
pub mod dyson;
pub mod config;
pub mod error;
pub mod harness;
pub mod inchworm;
pub mod system;

mod streams;

pub use error::{Error, Result};
