//! Invariant and stationary densities of random beta-transformations.
//!
//! The crate builds the explicit series densities of i.i.d. systems, their
//! derivative in a Bernoulli weight, the fiber densities of systems driven by
//! an invertible noise process, and independent numerical cross-checks
//! (Ulam discretization and Monte Carlo).

pub mod beta_map;
pub mod error;
pub mod iid_density;
pub mod quenched;
pub mod response;
pub mod stepfn;
pub mod transfer;
pub mod verify;

pub use beta_map::Beta;
pub use error::{Error, Hypothesis, Result};
pub use stepfn::StepFunction;
pub use transfer::BetaSystem;
