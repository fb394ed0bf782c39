//! File formats, pipeline stages and the `afg` command line around the
//! `afg-core` model.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;
pub mod stages;
pub mod sweep;

pub use afg_core as core;
