//! File formats, run configuration and the command-line workflows around
//! [`transunet_core`].

pub mod checkpoint;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod overlay;
pub mod run_config;
pub mod tables;
mod text;
pub mod volume_file;

pub use error::{Category, Error, Result};
