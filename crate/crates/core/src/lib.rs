//! Cross-modal identity matching over superpixel graphs.
//!
//! Images are segmented into superpixels, turned into KNN graphs, encoded by
//! per-modality graph networks, refined by cross-attention and entropic
//! optimal transport, pooled into unit-norm embeddings and trained with a
//! triplet objective. Retrieval metrics rank a face gallery per query.

pub mod align;
pub mod dataset;
pub mod encoders;
pub mod error;
pub mod graph;
pub mod imaging;
pub mod numcore;
pub mod pipeline;
pub mod retrieval;
pub mod training;

pub use error::{Error, Result};
