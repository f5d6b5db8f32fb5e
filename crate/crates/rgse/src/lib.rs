//! Files, experiments and the command line around [`rgse_core`].
//!
//! - [`conllu`], [`bpe_io`], [`checkpoint`], [`config_file`]: on-disk formats.
//! - [`pipeline`]: corpus preparation, training and evaluation.
//! - [`report`], [`manifest`]: CSV/SVG outputs and run records.
//! - [`oracle`], [`verify`]: independent reference code and the check suites.
//! - [`commands`]: what each `rgse` subcommand does.

pub mod bpe_io;
pub mod checkpoint;
pub mod commands;
pub mod config_file;
pub mod conllu;
pub mod error;
pub mod manifest;
pub mod oracle;
pub mod pipeline;
pub mod report;
pub mod verify;

pub use error::{Error, Result};
