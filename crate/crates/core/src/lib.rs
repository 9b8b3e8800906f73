//! Correlated binary failure models for infrastructure networks.
//!
//! Two surrogates match the same first and second moments of component
//! failure indicators: a pairwise maximum-entropy (Ising) model and a
//! dichotomized Gaussian. Around them sit a seismic hazard model that
//! produces the moments, entropy estimators, and a road-network trip
//! completion experiment.

pub mod bvn;
pub mod cli;
pub mod dg;
pub mod entropy;
pub mod error;
pub mod fit;
pub mod gibbs;
pub mod hazard;
pub mod io;
pub mod model;
pub mod network;
pub mod rng;

pub use error::{Error, ErrorKind, Result};
