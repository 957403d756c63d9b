//! Experiment harness for skill-aware contrastive context encoders:
//! meta-training and meta-testing loops, agent variants, statistics,
//! embedding export, sweeps and reports.

pub mod agent;
pub mod config;
pub mod error;
pub mod eval;
pub mod export;
pub mod io;
pub mod report;
pub mod stats;
pub mod suites;
pub mod sweep;
pub mod train;

pub use config::{ContrastiveMode, ExperimentConfig, Variant, VariantSpec};
pub use error::{HarnessError, Result};
