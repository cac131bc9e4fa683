//! Explanation methods, fairwashing attacks and tangent-space-projected
//! explanations for small dense classifiers.

pub mod attack;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod evalmetrics;
pub mod explain;
pub mod linalg;
pub mod manifold;
pub mod models;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::Tensor;
