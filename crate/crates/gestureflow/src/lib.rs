//! Video two-stream gesture recognition: file formats, corpus IO and the
//! experiment runner behind the `gestureflow` command.
//!
//! The numeric work (tensors, autodiff, flow, model, training, metrics)
//! lives in `gestureflow-core`, re-exported here as [`core`].

pub use gestureflow_core as core;

pub mod config;
pub mod corpus;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod ingest;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use experiment::Runner;
