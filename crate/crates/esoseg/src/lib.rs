//! Files, configuration and the command line around `esoseg_core`.
//!
//! [`pipeline`] chains the core stages; [`cli`] exposes them as subcommands.
//! Volumes are MetaImage ([`mhd`]), networks are [`checkpoint`] files, and
//! the remaining text formats live in [`formats`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod formats;
pub mod mhd;
pub mod pipeline;

pub use error::{CliError, Stage};
