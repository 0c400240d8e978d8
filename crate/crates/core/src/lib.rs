//! Class-discriminant channel scoring and FLOP-normalized structural pruning
//! for convolutional networks.

pub mod bench;
pub mod cli;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod netgraph;
pub mod report;
pub mod sensitivity;
pub mod synth;
pub mod tensorstore;

pub use error::{Error, Result};
