//! Reply-to scoring: pair datasets, the built-in lexical scorer, the score
//! cache and the external scorer protocol, all behind [`ReplyScorer`].

pub mod cache;
pub mod lexical;
pub mod pairs;
pub mod protocol;

use std::collections::BTreeMap;
use std::time::Duration;

use thiserror::Error;

use crate::tree::PrefixView;

pub use cache::{CacheScorer, RecordingScorer, ScoreCache};
pub use lexical::{
    score_pair, train_lexical_scorer, LexicalHyper, LexicalScorer, LexicalScorerModel, ScorerTrainReport,
};
pub use pairs::{build_pair_dataset, read_pairs, write_pairs, ReplyPair};
pub use protocol::{external_score_batch, ExternalScorer, ProtocolClient};

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("negative ratio must be positive and finite, got {0}")]
    InvalidRatio(f64),
    #[error("training pairs contain a single class")]
    SingleClass,
    #[error("missing cached scores for {} pair(s) (child, parent): {:?}", .0.len(), .0)]
    MissingScores(Vec<(String, String)>),
    #[error("score {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("cached score for child `{child}` / parent `{parent}` already holds a different value")]
    CacheConflict { child: String, parent: String },
    #[error("window node {node} is outside the prefix of size {k}")]
    WindowOutsidePrefix { node: usize, k: usize },
    #[error("transport error after {completed}/{total} scores: {message}")]
    Transport {
        message: String,
        completed: usize,
        total: usize,
    },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("scorer timed out after {after:?} with {completed}/{total} scores")]
    Timeout {
        after: Duration,
        completed: usize,
        total: usize,
    },
    #[error("scorer reported an error for pair {pair_id:?}: {message}")]
    Remote {
        pair_id: Option<String>,
        message: String,
    },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One candidate pair: does `child` reply to `parent`?
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRequest<'a> {
    pub parent_id: &'a str,
    pub child_id: &'a str,
    pub text_a: &'a str,
    pub text_b: &'a str,
}

/// Anything that turns candidate pairs into reply-to probabilities.
pub trait ReplyScorer {
    fn name(&self) -> String;
    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError>;
}

impl<S: ReplyScorer + ?Sized> ReplyScorer for &mut S {
    fn name(&self) -> String {
        (**self).name()
    }

    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError> {
        (**self).score_batch(requests)
    }
}

/// Score the new comment at `new_index` against every node of `window`.
///
/// `window` must lie inside the prefix; the new comment is the node right
/// after it.
pub fn score_candidates<S: ReplyScorer + ?Sized>(
    scorer: &mut S,
    prefix: &PrefixView<'_>,
    new_index: usize,
    window: &[usize],
) -> Result<BTreeMap<usize, f64>, ScoreError> {
    let tree = prefix.tree();
    let k = prefix.k();
    if let Some(&node) = window.iter().find(|&&n| n >= k) {
        return Err(ScoreError::WindowOutsidePrefix { node, k });
    }
    let child = tree.node(new_index);
    let requests: Vec<ScoreRequest<'_>> = window
        .iter()
        .map(|&n| {
            let parent = tree.node(n);
            ScoreRequest {
                parent_id: &parent.id,
                child_id: &child.id,
                text_a: &parent.text,
                text_b: &child.text,
            }
        })
        .collect();
    let scores = scorer.score_batch(&requests)?;
    Ok(window.iter().copied().zip(scores).collect())
}
