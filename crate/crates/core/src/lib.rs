pub mod artifact;
pub mod classifiers;
pub mod config;
pub mod data;
pub mod diffmath;
pub mod error;
pub mod lapace;
pub mod lgmvae;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
