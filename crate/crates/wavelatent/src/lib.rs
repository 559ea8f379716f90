//! File formats, evaluation reports and the command-line front end for
//! `wavelatent-core`.
//!
//! * [`dataset`]: CSV and `WLAT` dataset files.
//! * [`container`]: the `WLMD` model container.
//! * [`report`]: evaluation CSV tables and SVG charts.
//! * [`config`]: the key-value run configuration.
//! * [`parallel`]: worker pool and per-path parallel drivers.
//! * [`cli`]: subcommand parsing and dispatch.

pub(crate) mod bytes;
pub mod cli;
pub mod config;
pub mod container;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod report;

pub use error::{Error, Result};
