//! Wild-bootstrap inference for linear IV regressions with few clusters.
//!
//! The crate provides k-class estimators, cluster-robust covariance
//! estimation, restricted-efficient wild-bootstrap Wald tests, bootstrap
//! Anderson–Rubin, LM and CQLR tests, confidence-set inversion and a Monte
//! Carlo engine for size and power experiments.

pub mod ar;
pub mod cce;
pub mod confidence;
pub mod data;
pub mod dist;
pub mod error;
pub mod fixtures;
pub mod inference;
pub mod io;
pub mod kclass;
pub mod linalg;
pub mod robust;
pub mod rng;
pub mod sim;
pub mod wald;

pub use data::{ClusteredDataset, Hypothesis, PartialledDesign};
pub use error::{Error, Result};
pub use kclass::{KClassFit, Method};
