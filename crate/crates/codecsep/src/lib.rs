//! File formats, on-disk datasets and the command line around `codecsep-core`.

pub mod archive;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod log;
pub mod wav;

pub use error::{Error, Result};
