pub mod checkpoint;
pub mod data;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod experiments;
pub mod grad;
pub mod inference;
pub mod model;
pub mod special;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
