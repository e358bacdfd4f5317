//! File formats, experiment harness and command line for `debias-core`.

pub mod checkpoint;
pub mod dataset_file;
pub mod error;
pub mod experiment;
pub mod export;
pub mod records;

pub use error::{Error, Result};
