//! Diagnose object and attribute hallucinations of a vision-language model
//! image by image, then turn the diagnosis into targeted positive/negative
//! instruction-tuning samples.
//!
//! The pipeline has two stages that communicate only through line-delimited
//! record files:
//!
//! 1. **diagnose**: caption the image, extract `{object, attribute, quantity}`
//!    mentions from the caption, ground every mention with an open-vocabulary
//!    detector and classify what could not be grounded as hallucinated.
//! 2. **generate**: emit existence, attribute, position and relation
//!    question/answer pairs whose negatives name exactly the diagnosed
//!    hallucinations.
//!
//! Alongside the pipeline sit the analytics used to compare hallucination
//! profiles of different models (overlap@K, extrapolated rank-biased overlap)
//! and the yes/no benchmark metric arithmetic (accuracy, F1, yes-ratio,
//! MME-style Acc/Acc+).
//!
//! Geometry and metric arithmetic are generic over the scalar type
//! ([`Scalar`] for floats); the record types fix `f64`, and the aliases
//! below name the common instantiations.

pub mod analytics;
pub mod clients;
pub mod datamodel;
pub mod diagnosis;
pub mod evalmetrics;
pub mod extraction;
pub mod generation;
pub mod geometry;
pub mod grounding;
pub mod pipeline;
mod scalar;

pub use scalar::Scalar;

/// Bounding box in pixel coordinates as stored in record files.
pub type BBox64 = geometry::BBox<f64>;
/// Single-precision bounding box.
pub type BBox32 = geometry::BBox<f32>;
/// Binary yes/no metrics at double precision.
pub type BinaryMetrics64 = evalmetrics::BinaryMetrics<f64>;
/// MME-style scores at double precision.
pub type MmeScores64 = evalmetrics::MmeScores<f64>;
/// Similarity table rows at double precision.
pub type SimilarityRow64 = analytics::SimilarityRow<f64>;
