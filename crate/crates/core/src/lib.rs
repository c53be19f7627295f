//! Hyperspherical convolution networks with hand-written backpropagation,
//! angular softmax losses and a small Hessian-conditioning laboratory.

pub mod angular;
pub mod checkpoint;
pub mod conditioning;
pub mod data;
pub mod error;
pub mod experiment;
pub mod layers;
pub mod losses;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod train;

pub use angular::AngularOperator;
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
