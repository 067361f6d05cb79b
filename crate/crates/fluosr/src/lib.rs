//! File formats, training orchestration and the `fluosr` command line on
//! top of `fluosr-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod container;
pub mod error;
pub mod evaluate;
pub mod infer;
pub mod io;
pub mod log;
pub mod train;

pub use error::{FluoError, Result};
