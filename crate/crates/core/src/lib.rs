//! Meta-learned few-shot question classification feeding a multiple-choice
//! reader through query expansion.

pub mod autodiff;
pub mod bench;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod qa;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
