//! Semiparametric cointegration rank tests for bivariate VAR(1) error
//! correction models with heavy-tailed innovations.

pub mod cli;
pub mod curve;
pub mod dgp;
pub mod error;
pub mod harness;
pub mod kde;
pub mod limit;
pub mod linalg;
pub mod pipeline;
pub mod process;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
