//! Personalized federated graph classification with spectral GNNs.
//!
//! Clients train a spectral graph network whose eigenvalue encoder and
//! filter encoder are averaged across the federation, while attention,
//! decoding, convolution, classification and a per-client preference
//! vector stay local.

pub mod autodiff;
pub mod error;
pub mod federation;
pub mod graph;
pub mod harness;
pub mod matrix;
pub mod specnet;
pub mod spectral;

pub use error::{Error, Result};
