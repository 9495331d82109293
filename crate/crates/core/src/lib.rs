//! Recursive schema-guided information extraction.
//!
//! A hierarchical [`Schema`] is compiled level by level into encoder
//! queries (prefix groups, candidate types and the text), scored pairwise by
//! a rotary scoring head, and decoded with token linking into typed span
//! paths or classification labels. Training uses circle loss over the
//! valid cells of each score matrix.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root pick the usual instantiations.

pub mod config;
pub mod data;
pub mod decode;
pub mod engine;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod model;
pub mod query;
pub mod scalar;
pub mod schema;
pub mod tokenize;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use schema::{Mode, Schema, SchemaNode};

/// Training precision.
pub type Model32 = model::Model<f32>;
/// Gradient-check precision.
pub type Model64 = model::Model<f64>;
pub type ScoreMatrix32 = decode::ScoreMatrix<f32>;
pub type ScoreMatrix64 = decode::ScoreMatrix<f64>;
pub type Gradients32 = model::Params<f32>;
pub type Gradients64 = model::Params<f64>;
