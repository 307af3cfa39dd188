//! Predicate prediction for visual relationship detection.
//!
//! Object pairs are described by the word vectors of their class names and
//! by their normalized boxes. A two-layer bidirectional recurrent network
//! reads the sequence `(subject, spatial, object)` and scores every
//! predicate plus a "no relation" class. Detector confidences and predicate
//! probabilities combine multiplicatively into relationship scores, which
//! are evaluated with top-K recall in the predicate, phrase and
//! relationship detection settings.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to the common choices.

pub mod brnn;
pub mod checkpoint;
pub mod dataset;
pub mod embeddings;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod inference;
pub mod scalar;
pub mod synthbench;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type BBox = geometry::BoundingBox<f64>;
pub type Vector = embeddings::WordVector<f64>;
pub type Table = embeddings::EmbeddingTable<f64>;
pub type Params = brnn::BrnnParams<f64>;
pub type Grads = brnn::Gradients<f64>;
pub type Trace = brnn::ForwardTrace<f64>;

pub type Table32 = embeddings::EmbeddingTable<f32>;
pub type Params32 = brnn::BrnnParams<f32>;
