//! Random walks among bounded random conductances on `Z^d`.
//!
//! The crate samples i.i.d. conductance environments in a finite box,
//! computes quenched return probabilities exactly (forward evolution) and by
//! Monte Carlo, builds the coarse-grained walk on the strong component,
//! measures isoperimetric quantities and censuses trap configurations.
//!
//! Numerical routines downstream of the environment are generic over
//! [`Scalar`]; the aliases below fix the common choices.

pub mod cluster;
pub mod coarse;
pub mod env;
pub mod error;
pub mod iso;
pub mod kernel;
pub mod lattice;
pub mod rng;
pub mod scalar;
pub mod stats;
pub mod traps;

pub use error::{RcmError, Result};
pub use scalar::{Exact, Scalar};

/// Site distribution after exact evolution, in `f64`.
pub type Distribution64 = kernel::SiteDistribution<f64>;
/// Exact rational site distribution.
pub type ExactDistribution = kernel::SiteDistribution<Exact>;
/// Coarse-grained chain row in `f64`.
pub type HatChain64 = coarse::HatChain<f64>;
/// Exact rational coarse-grained chain row.
pub type ExactHatChain = coarse::HatChain<Exact>;
/// Chain view for isoperimetry in `f64`.
pub type ChainView64 = iso::ChainView<f64>;
/// Exact rational chain view.
pub type ExactChainView = iso::ChainView<Exact>;
