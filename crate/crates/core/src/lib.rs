//! Iterate averaging: recover l2-regularized solutions for many penalty
//! strengths from a single unregularized optimization path.

pub mod averaging;
pub mod data_io;
pub mod error;
pub mod linalg;
pub mod optimizers;
pub mod oracles;
pub mod problems;

pub use error::{Error, Result};
