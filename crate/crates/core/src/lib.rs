//! Predicting whether the next comment of a threaded conversation branches
//! off an inner node or continues a thread at a leaf.
//!
//! The pipeline: parse comment trees ([`corpus`], [`tree`]), score candidate
//! reply-to pairs ([`scorer`]), pool the scores into a 32-column feature row
//! ([`features`]), train a small network ([`model`]) and evaluate it
//! ([`eval`]). [`pipeline`] chains all of it from a manifest; [`synth`]
//! generates corpora for testing.

pub mod corpus;
pub mod eval;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod scorer;
pub mod stats;
pub mod synth;
pub mod tree;

pub use corpus::{parse_corpus, Corpus, FilterConfig};
pub use features::{FeatureMask, FeatureMatrix, FEATURE_DIM, FEATURE_NAMES};
pub use tree::{BranchInstance, Comment, ConversationTree, PrefixView};
