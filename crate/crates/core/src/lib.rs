//! Training-free few-shot semantic segmentation over frozen per-layer backbone
//! features.
//!
//! Support features are clustered into per-class prototypes and summarized by
//! a class Gram matrix; query patches are scored against both and assigned to
//! the best-scoring class. The [`analysis`] module evaluates every backbone
//! layer, computes layer-quality heuristics and searches heuristic weightings
//! against the ground-truth oracle layer.

pub mod analysis;
pub mod cli;
pub mod episodes;
pub mod error;
pub mod interp;
pub mod kmeans;
pub mod linalg;
pub mod matching;
pub mod metrics;
pub mod prototypes;
pub mod types;

pub use error::{Error, Result};
pub use matching::{segment_episode, MatchMode, SegmentParams};
pub use prototypes::PrototypeParams;
pub use types::{
    validate_episode, ClassMask, Episode, FeatureMap, Layer, LayerStack, RegisterTokens,
    BACKGROUND, IGNORE_LABEL,
};
