//! Diagnostics for training-data-attribution score matrices: structural
//! reliability measures, null-calibrated musical homogeneity of top-K
//! retrieval groups, alignment of the dominant ranking axis with feature
//! channels, and rank-1 residual re-analysis.

pub mod alignment;
pub mod bench;
pub mod embedding;
pub mod error;
pub mod features;
pub mod homogeneity;
pub mod io;
pub mod linalg;
pub mod matrix;
pub mod normalize;
pub mod pipeline;
pub mod reliability;
pub mod residual;
pub mod rng;
pub mod similarity;

pub use error::{AriaError, Result};
pub use matrix::{Precision, ScoreMatrix};
