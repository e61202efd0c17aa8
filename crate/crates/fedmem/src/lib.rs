//! Deterministic single-process simulator for personalised federated
//! learning on synthetic Gaussian-blob data.
//!
//! The crate builds up from a small f64 dense-network toolkit
//! ([`numerics`]) through data synthesis ([`data`]), heterogeneous
//! partitioning ([`partition`]), the federated protocol and baselines
//! ([`protocol`]), server-side data-free generator training
//! ([`generator`]), and per-client personalisation ([`personalize`]), to
//! an experiment harness ([`experiment`], [`metrics`], [`report`]) driven
//! by the `fedmem` binary.
//!
//! Every run is reproducible: all randomness flows from one master seed
//! through named, order-independent streams ([`rng`]), so outputs are
//! byte-identical across repeats and thread counts.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod generator;
pub mod metrics;
pub mod numerics;
pub mod partition;
pub mod personalize;
pub mod protocol;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
