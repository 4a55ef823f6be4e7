//! Experiment recipes, file formats and the `ntk-exp` command line built on
//! `ntk-core`.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod output;
pub mod recipes;

pub use error::{ExpError, Result};
