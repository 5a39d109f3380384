//! Command-line front end and HTTP debugging service for concept selection
//! models.

pub mod args;
pub mod commands;
pub mod service;
pub mod views;

pub use args::Cli;
pub use commands::run;
