//! Tightening regression representations, at desk scale.
//!
//! The pieces: a dense matrix/tape substrate ([`ndnum`]), a log-domain
//! Sinkhorn solver for self optimal transport with a forbidden diagonal
//! ([`sinkhorn`]), task and transport-consistency losses ([`losses`]), small
//! trainable models including the multi-target head ([`models`]), synthetic
//! manifold datasets ([`manifolds`]), ordinality and gradient-direction
//! diagnostics ([`metrics`]), and the experiment harness with its CLI
//! ([`harness`]).

pub mod error;
pub mod harness;
pub mod losses;
pub mod manifolds;
pub mod metrics;
pub mod models;
pub mod ndnum;
pub mod sinkhorn;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
