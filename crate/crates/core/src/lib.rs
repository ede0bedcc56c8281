pub mod cnn;
pub mod data;
pub mod error;
pub mod eval;
pub mod geom;
pub mod localize;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod transfer;

pub use error::{Error, Result};
pub use rng::Prng;
pub use tensor::Tensor;
