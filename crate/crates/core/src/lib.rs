//! Controllable dialogue generation over a conditional n-gram model.

pub mod archive;
pub mod corpus;
pub mod decoder;
pub mod desk;
pub mod embeddings;
pub mod engine;
pub mod error;
pub mod features;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod service;
pub mod simulator;

pub use error::{Error, Result};
