pub mod error;
pub mod parallel;
pub mod specfun;

pub use error::{Error, Result};
pub mod lambda_series;
pub mod mellin;
pub mod kernel;
pub mod simulator;
pub mod resolvent;
pub mod validation;
pub mod cli;
