//! Adapter-based meta-transfer learning for low-resource abstractive summarization.
//!
//! The crate is generic over the floating point type through [`Scalar`];
//! `f64` is the default used by the aliases below and by gradient checks.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod evalrouge;
pub mod metatrain;
pub mod model;
pub mod report;
pub mod scalar;
pub mod similarity;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Graph64 = autodiff::Graph<f64>;
pub type Seq2Seq64 = model::Seq2Seq<f64>;
pub type Seq2Seq32 = model::Seq2Seq<f32>;
