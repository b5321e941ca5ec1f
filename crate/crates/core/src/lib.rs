//! Direct feedback alignment and backpropagation for small fully connected
//! and convolutional networks, with per-layer alignment measurement.

pub mod alignment;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod feedback;
pub mod layers;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
