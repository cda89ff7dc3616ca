//! Experiment harness: configuration, cell execution, CSV persistence and reports.

pub mod config;
pub mod criteria;
pub mod error;
pub mod harness;
pub mod persist;
pub mod report;
