//! Spectral space-time Petrov-Galerkin solver and verification harness for
//! the linear stochastic heat equation on the unit interval.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod infsup;
pub mod mild;
pub mod multiplicative;
pub mod noise;
pub mod quad;
pub mod rng;
pub mod spacetime;
pub mod spectral;
pub mod stats;

pub mod config;
pub mod experiments;
pub mod report;

/// Version of every JSON document this crate emits.
pub const SCHEMA_VERSION: u32 = 1;

pub use error::{Error, Result};
pub use noise::{NoiseSample, QSpec, TimeGrid};
pub use spacetime::{Forcing, KappaLaw, LoadSpec, OperatorSpec, SpaceTimeSolution};
pub use spectral::{EigenBasis, SpectralVec};
pub use stats::McSummary;
