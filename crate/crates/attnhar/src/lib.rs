//! Dataset files, checkpoints, training runs, localization output and the
//! command line on top of `attnhar-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod history;
pub mod locate;
pub mod run;
pub mod ucihar;

pub use error::{Error, Result};
