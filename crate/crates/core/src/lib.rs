//! Subgroup unlearning for contrastive dual encoders.
//!
//! The crate provides a small trainable dual encoder, a synthetic
//! superclass/subgroup benchmark, the forget → remind → restore unlearning
//! pipeline, five comparison baselines and the evaluation protocol
//! (zero-shot accuracy, restoration ratios, aggregate score, retrieval).
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the element type.

pub mod adapters;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod records;
pub mod runner;
pub mod scalar;
pub mod selection;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type ParameterSetF32 = model::ParameterSet<f32>;
pub type ParameterSetF64 = model::ParameterSet<f64>;
pub type DatasetF32 = data::Dataset<f32>;
pub type DatasetF64 = data::Dataset<f64>;
pub type UnlearnTaskF32 = data::UnlearnTask<f32>;
pub type UnlearnTaskF64 = data::UnlearnTask<f64>;
