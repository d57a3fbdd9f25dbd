//! Experiment runner: dataset generation, training, evaluation and variant
//! comparison on top of `crossnet`.

pub mod compare;
pub mod error;
pub mod gendata;
pub mod keyvalue;
pub mod manifest;
pub mod run;

pub use error::{CliError, CliResult};
