//! Cell-based architecture search for a two-modality early-fusion classifier.

pub mod autodiff;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod evalharness;
pub mod genotype;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod search;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Model, tensor and search result types at double precision (the default).
pub type Model = model::JaeModel<f64>;
pub type Tensor = autodiff::Tensor<f64>;
pub type SearchResult = search::SearchResult<f64>;

/// Single-precision counterparts, roughly twice as fast on the dense kernels.
pub type ModelF32 = model::JaeModel<f32>;
pub type TensorF32 = autodiff::Tensor<f32>;
pub type SearchResultF32 = search::SearchResult<f32>;

/// Exact class-averaged accuracy.
pub type ExactAccuracy = num_rational::Ratio<u128>;
