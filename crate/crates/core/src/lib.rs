//! Asynchronous Bayesian optimization for expensive, unreliable,
//! long-latency cost functions.

pub mod acqopt;
pub mod acquisition;
pub mod bench;
pub mod cli;
pub mod config;
pub mod driver;
pub mod error;
pub mod evaluator;
pub mod gp;
pub mod hyper;
pub mod kernel;
pub mod linalg;
pub mod space;

pub use error::{Error, Result};
