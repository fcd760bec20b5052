//! Experiment runner for the MetaDefa trainer: file formats, run
//! configuration, reports and the `metadefa` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod heatmap;
pub mod netpbm;
pub mod report;

pub use config::{DatasetConfig, RunConfig};
pub use error::{Error, Result};
