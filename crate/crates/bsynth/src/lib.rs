//! File formats, generator backends, run configuration, reports and the
//! staged pipeline behind the `bsynth` command.

pub mod backend;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;

pub use bsynth_core as core;
pub use error::{Category, Error, Result};
