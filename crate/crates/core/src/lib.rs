//! Monte Carlo and quadrature toolkit for surface measures on level sets of
//! Gaussian path extrema, and for the integration-by-parts identities they
//! satisfy.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditioned_laws;
pub mod density_oracles;
pub mod error;
pub mod functional;
pub mod ibp_verifier;
pub mod malliavin;
pub mod mc;
pub mod path_engine;
pub mod quadrature;
pub mod rng;
pub mod special;
pub mod surface_measure;
pub mod spectral_ops;

pub use error::{GsurfError, Result};
