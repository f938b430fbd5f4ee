//! Configuration, file formats, parallel batch runs and the command stages
//! built on `reentry-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod pool;

pub use reentry_core as core;
