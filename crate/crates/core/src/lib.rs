//! Contextual fully-convolutional network for hyperspectral pixel
//! classification: tensor kernels, layers, the network in patch and image
//! modes, SGD training, data ingestion and evaluation.

pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
