//! Experiment driver for iterate averaging.

pub mod config;
pub mod experiments;
pub mod runner;
