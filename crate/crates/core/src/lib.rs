//! Delayed-bottlenecking pre-training and fine-tuning of graph encoders.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod finetune;
pub mod graph;
pub mod mask;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod pretrain;
pub mod rng;

pub use error::{Error, Result};
