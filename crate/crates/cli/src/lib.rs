//! Command-line driver: dataset generation, training, sampling, evaluation
//! and gradient checking on top of `pcdiff-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod gradcheck;
pub mod train;

pub use checkpoint::Checkpoint;
pub use commands::{run, Cli};
pub use config::RunConfig;
pub use error::{CliError, CliResult};
pub use train::Trainer;
