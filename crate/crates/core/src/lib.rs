//! Multitracer PET/CT lesion segmentation workflow.
//!
//! Each study is classified as FDG or PSMA from a coronal maximum-intensity
//! projection, routed to tracer-specific preprocessing (resampling and
//! z-scoring), segmented by a patch-based 3D encoder-decoder trained with a
//! Dice + focal objective, and scored with Dice and false-positive /
//! false-negative lesion volumes.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the width used by the command line tool.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapter;
pub mod classifier;
pub mod error;
pub mod fusion;
pub mod loss;
pub mod metrics;
pub mod mip;
pub mod pipeline;
pub mod preprocess;
pub mod reduce;
pub mod scalar;
pub mod segmenter;
pub mod volume;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Working precision of the pipeline and CLI.
pub type Real = f32;
