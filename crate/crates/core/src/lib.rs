//! Temporal contrastive graph learning at desk scale.
//!
//! Videos are cut into snippets and frame-sets, encoded, arranged on
//! chronological chain graphs, corrupted into two views, and trained with a
//! node-level contrastive loss plus an adaptive snippet-order classifier.

pub mod diffcore;
pub mod config;
pub mod contrast;
pub mod encoder;
pub mod error;
pub mod evalkit;
pub mod orderhead;
pub mod model;
mod nn;
pub mod sampler;
pub mod store;
pub mod tgraph;
pub mod trainer;

pub use error::{Error, Result};
