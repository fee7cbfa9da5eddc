//! Hyperspectral image classification with a hybrid 3D/2D convolutional
//! network.
//!
//! The crate covers the whole pipeline: spectral dimensionality reduction
//! ([`dimred`]), cube I/O and patch extraction ([`data`]), the network and its
//! training loop ([`model`]), evaluation statistics ([`metrics`]) and the
//! end-to-end runs driven by the command line ([`pipeline`]).

pub mod autodiff;
pub mod data;
pub mod dimred;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;

pub use error::{Error, ErrorCategory, Result};
