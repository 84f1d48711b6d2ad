pub mod container;
pub mod data;
pub mod embedding;
pub mod error;
pub mod nn;
pub mod posttrain;
pub mod reconstruct;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
