//! Command line tools and the job service around `blockdetail`.

pub mod commands;
pub mod config;
pub mod error;
pub mod generate;
pub mod models;
pub mod service;

pub use config::RunConfig;
pub use error::{CliError, ErrorKind};
