//! Effect estimation for experiments randomized on one side of a
//! bipartite interaction graph and measured on the other.
//!
//! Buyers are randomized; seller outcomes respond to the share of their
//! buyer interactions that came from treated buyers. The pipeline is
//! [`ingest`] → [`graph`] → [`exposure`] → [`estimators`] → [`inference`],
//! with [`simulator`] generating synthetic experiments and [`report`]
//! producing the analysis artifacts.

pub mod error;
pub mod estimators;
pub mod exposure;
pub mod graph;
pub mod inference;
pub mod ingest;
pub mod numeric;
pub mod report;
pub mod simulator;

pub use error::{Error, Result};
