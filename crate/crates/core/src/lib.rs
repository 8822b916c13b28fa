pub mod adversary;
pub mod concepts;
pub mod distribution;
pub mod error;
pub mod exec;
pub mod fourier;
pub mod learners;
pub mod oracle;
pub mod privacy;
pub mod protocol;
pub mod rng;
pub mod simulation;

pub use error::{QsqError, Result};
