//! Core numerics for two-stream video gesture recognition.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without the standard library (only `alloc` is required). File formats, the
//! experiment runner and the command-line interface live in the `gestureflow`
//! crate.
//!
//! The pieces, bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: a dense tensor type and a tape-based
//!   reverse-mode engine with the operators the models need.
//! * [`optim`] and [`gradcheck`]: parameter storage, Adam, and a
//!   finite-difference gradient checker.
//! * [`video`] and [`flow`]: temporal/spatial preprocessing and a coarse-to-fine
//!   Horn–Schunck estimator with HSV flow encoding.
//! * [`model`]: two convolutional extractors (RGB and flow) feeding an LSTM or
//!   convolutional LSTM head.
//! * [`training`], [`pipeline`] and [`metrics`]: splits, class balancing, the
//!   training loop and ROC/accuracy/confusion evaluation.
//! * [`synth`]: a deterministic motion-gesture corpus generator.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod flow;
pub mod gradcheck;
pub mod metrics;
pub mod model;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod video;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
