//! Context-aware graph convolution recommender.

pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod model;
pub mod persist;
pub mod propagation;
pub mod serving;
pub mod training;

pub use error::{GcmError, Result};
