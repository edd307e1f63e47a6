//! Federated optimization with compressed uplinks and local gradient
//! tracking.
//!
//! The crate simulates FedCOM, FedCOMGATE, FedGATE, a client-sampled
//! FedCOMGATE and a top-k variant with error memory on synthetic
//! federations, and measures the quantities their analysis depends on
//! (compressor distortion `q`, the heterogeneity gap `G_q`, cosine
//! similarity of client gradients, communicated bits).

pub mod algorithms;
pub mod compression;
pub mod engine;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod repro;
pub mod rng;

pub use error::{Error, Result};
