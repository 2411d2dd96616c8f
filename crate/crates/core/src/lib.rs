//! Site-based approximate inference for sparse Markovian Gaussian processes.

pub mod error;
pub mod kernels;
pub mod linalg;

pub use error::{Error, Result};
pub mod chain;
pub mod cubature;
pub mod harness;
pub mod inference;
pub mod likelihoods;
pub mod posterior;
pub mod problem;
pub mod spatiotemporal;
