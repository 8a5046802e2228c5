//! Self-supervised recovery of structured image collections with a
//! convolutional autoencoder whose latent codes are tied to a tensor-ring
//! factorization over the collection's attributes.

pub mod autoencoder;
mod binio;
pub mod conv;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod measurement;
pub mod metrics;
pub mod optim;
pub mod pnm;
pub mod recovery;
pub mod parallel;
pub mod tensor;
pub mod tensor_ring;

pub use error::{Error, Result};
pub use parallel::Execution;
pub use tensor::DenseTensor;
pub use tensor_ring::{MultiIndex, TrCores};
