//! DD-4DVAR: variational data assimilation solved by overlapping domain
//! decomposition in space and time, with an error-analysis harness on a
//! linearized 1D shallow-water testbed.

pub mod analysis;
pub mod assimilation;
pub mod cg;
pub mod config;
pub mod covariance;
pub mod domain;
pub mod error;
pub mod experiment;
pub mod model;
pub mod observations;
pub mod report;

pub use error::{Error, Result};
