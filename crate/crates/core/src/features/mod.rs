//! The 32-column branching feature row: pooled reply-to scores over the
//! leaf and intermediate groups, then structural and temporal context.

pub mod matrix;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scorer::ScoreError;
use crate::stats::{mean, median, percentile_sorted, std_dev};
use crate::tree::{PrefixView, TreeError};

pub use matrix::{extract_corpus_features, extract_tree_features, FeatureMatrix, InstanceKey};

pub const POOL_DIM: usize = 10;
pub const CONTEXT_DIM: usize = 12;
pub const FEATURE_DIM: usize = 2 * POOL_DIM + CONTEXT_DIM;

/// Column names in row order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = [
    "leaf_max",
    "leaf_min",
    "leaf_mean",
    "leaf_median",
    "leaf_sum_top3",
    "leaf_mean_top3",
    "leaf_std",
    "leaf_p25",
    "leaf_p75",
    "leaf_p95",
    "intermediate_max",
    "intermediate_min",
    "intermediate_mean",
    "intermediate_median",
    "intermediate_sum_top3",
    "intermediate_mean_top3",
    "intermediate_std",
    "intermediate_p25",
    "intermediate_p75",
    "intermediate_p95",
    "replies_to_author_leaves",
    "replies_to_author_intermediates",
    "mean_unique_authors",
    "median_unique_authors",
    "mean_depth_leaves",
    "mean_depth_intermediates",
    "leaf_intermediate_ratio",
    "time_from_root",
    "mean_time_diff_leaves",
    "mean_time_diff_intermediates",
    "author_node_ratio",
    "is_op_author",
];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("reply-to score {0} outside [0, 1]")]
    Domain(f64),
    #[error("prefix of size {0} is too small for a branch instance (need at least 2)")]
    InvalidInstance(usize),
    #[error("new comment timestamp {new} precedes the root timestamp {root}")]
    TimestampBeforeRoot { new: i64, root: i64 },
    #[error("no reply-to score for window node {0}")]
    MissingScore(usize),
    #[error("relaxation size must be positive")]
    ZeroRelaxation,
    #[error("feature schema mismatch: {0}")]
    Schema(String),
    #[error("feature file: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Order statistics of a group's reply-to scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoolBlock {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub sum_top3: f64,
    pub mean_top3: f64,
    pub std: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
}

impl PoolBlock {
    pub fn to_array(&self) -> [f64; POOL_DIM] {
        [
            self.max,
            self.min,
            self.mean,
            self.median,
            self.sum_top3,
            self.mean_top3,
            self.std,
            self.p25,
            self.p75,
            self.p95,
        ]
    }
}

/// Pool a multiset of scores. An empty multiset pools to all zeros.
///
/// Percentiles interpolate linearly between closest ranks and `std` is the
/// population standard deviation.
pub fn pool(scores: &[f64]) -> Result<PoolBlock, FeatureError> {
    if let Some(&bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(FeatureError::Domain(bad));
    }
    if scores.is_empty() {
        return Ok(PoolBlock::default());
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let top: &[f64] = &sorted[sorted.len().saturating_sub(3)..];
    let sum_top3: f64 = top.iter().sum();
    Ok(PoolBlock {
        max: sorted[sorted.len() - 1],
        min: sorted[0],
        mean: mean(&sorted),
        median: percentile_sorted(&sorted, 0.5),
        sum_top3,
        mean_top3: sum_top3 / top.len() as f64,
        std: std_dev(&sorted),
        p25: percentile_sorted(&sorted, 0.25),
        p75: percentile_sorted(&sorted, 0.75),
        p95: percentile_sorted(&sorted, 0.95),
    })
}

/// Structural and temporal features of the prefix relative to the new comment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub replies_to_author_leaves: f64,
    pub replies_to_author_intermediates: f64,
    pub mean_unique_authors: f64,
    pub median_unique_authors: f64,
    pub mean_depth_leaves: f64,
    pub mean_depth_intermediates: f64,
    pub leaf_intermediate_ratio: f64,
    pub time_from_root: f64,
    pub mean_time_diff_leaves: f64,
    pub mean_time_diff_intermediates: f64,
    pub author_node_ratio: f64,
    pub is_op_author: f64,
}

impl ContextBlock {
    pub fn to_array(&self) -> [f64; CONTEXT_DIM] {
        [
            self.replies_to_author_leaves,
            self.replies_to_author_intermediates,
            self.mean_unique_authors,
            self.median_unique_authors,
            self.mean_depth_leaves,
            self.mean_depth_intermediates,
            self.leaf_intermediate_ratio,
            self.time_from_root,
            self.mean_time_diff_leaves,
            self.mean_time_diff_intermediates,
            self.author_node_ratio,
            self.is_op_author,
        ]
    }
}

/// Context features over the whole prefix for a new comment by `author`
/// posted at `timestamp`.
pub fn context_features(prefix: &PrefixView<'_>, author: &str, timestamp: i64) -> Result<ContextBlock, FeatureError> {
    let k = prefix.k();
    if k < 2 {
        return Err(FeatureError::InvalidInstance(k));
    }
    let tree = prefix.tree();
    let root_ts = tree.node(0).timestamp;
    if timestamp < root_ts {
        return Err(FeatureError::TimestampBeforeRoot {
            new: timestamp,
            root: root_ts,
        });
    }
    let replies_to_author = |group: &[usize]| {
        group
            .iter()
            .filter(|&&n| tree.parent(n).is_some_and(|p| tree.node(p).author == author))
            .count() as f64
    };
    let depth_mean = |group: &[usize]| {
        let d: Vec<f64> = group.iter().map(|&n| tree.level(n) as f64).collect();
        mean(&d)
    };
    let time_diff_mean = |group: &[usize]| {
        let d: Vec<f64> = group
            .iter()
            .map(|&n| (timestamp - tree.node(n).timestamp) as f64)
            .collect();
        mean(&d)
    };

    let max_level = (0..k).map(|n| tree.level(n)).max().unwrap_or(0);
    let mut per_level: Vec<HashSet<&str>> = vec![HashSet::new(); max_level + 1];
    for n in 0..k {
        per_level[tree.level(n)].insert(&tree.node(n).author);
    }
    let level_authors: Vec<f64> = per_level.iter().map(|s| s.len() as f64).collect();
    let own = (0..k).filter(|&n| tree.node(n).author == author).count();

    let (leaves, inter) = (prefix.leaves(), prefix.intermediates());
    Ok(ContextBlock {
        replies_to_author_leaves: replies_to_author(leaves),
        replies_to_author_intermediates: replies_to_author(inter),
        mean_unique_authors: mean(&level_authors),
        median_unique_authors: median(&level_authors),
        mean_depth_leaves: depth_mean(leaves),
        mean_depth_intermediates: depth_mean(inter),
        leaf_intermediate_ratio: leaves.len() as f64 / inter.len() as f64,
        time_from_root: (timestamp - root_ts) as f64,
        mean_time_diff_leaves: time_diff_mean(leaves),
        mean_time_diff_intermediates: time_diff_mean(inter),
        author_node_ratio: own as f64 / k as f64,
        is_op_author: f64::from(u8::from(tree.node(0).author == author)),
    })
}

/// Nodes on the root paths of the `n` most recent leaves, ascending.
/// `None` keeps the whole prefix.
pub fn relaxation_window(prefix: &PrefixView<'_>, n: Option<usize>) -> Result<Vec<usize>, FeatureError> {
    let tree = prefix.tree();
    let Some(n) = n else {
        return Ok((0..prefix.k()).collect());
    };
    if n == 0 {
        return Err(FeatureError::ZeroRelaxation);
    }
    let mut inside = vec![false; prefix.k()];
    for &leaf in prefix.leaves().iter().rev().take(n) {
        let mut node = Some(leaf);
        while let Some(v) = node {
            if inside[v] {
                break;
            }
            inside[v] = true;
            node = tree.parent(v);
        }
    }
    Ok((0..prefix.k()).filter(|&v| inside[v]).collect())
}

/// A full feature row, before flattening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub leaf_pool: PoolBlock,
    pub intermediate_pool: PoolBlock,
    pub context: ContextBlock,
}

impl FeatureVector {
    /// Leaf pool, intermediate pool, context: see [`FEATURE_NAMES`].
    pub fn to_row(&self) -> [f64; FEATURE_DIM] {
        let mut row = [0.0; FEATURE_DIM];
        row[..POOL_DIM].copy_from_slice(&self.leaf_pool.to_array());
        row[POOL_DIM..2 * POOL_DIM].copy_from_slice(&self.intermediate_pool.to_array());
        row[2 * POOL_DIM..].copy_from_slice(&self.context.to_array());
        row
    }
}

/// Pool window scores per group and attach the context of the full prefix.
pub fn assemble_feature_vector(
    prefix: &PrefixView<'_>,
    author: &str,
    timestamp: i64,
    scores: &BTreeMap<usize, f64>,
    window: &[usize],
) -> Result<FeatureVector, FeatureError> {
    let mut window = window.to_vec();
    window.sort_unstable();
    window.dedup();
    let mut leaf_scores = Vec::new();
    let mut inter_scores = Vec::new();
    for &v in &window {
        let s = *scores.get(&v).ok_or(FeatureError::MissingScore(v))?;
        if prefix.is_leaf(v) {
            leaf_scores.push(s);
        } else if prefix.is_intermediate(v) {
            inter_scores.push(s);
        }
    }
    Ok(FeatureVector {
        leaf_pool: pool(&leaf_scores)?,
        intermediate_pool: pool(&inter_scores)?,
        context: context_features(prefix, author, timestamp)?,
    })
}

/// Column subsets for ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMask {
    #[default]
    Full,
    /// Pooled reply-to scores only.
    TextOnly,
    /// Context features only.
    NoText,
}

impl FeatureMask {
    pub fn keeps(&self, column: usize) -> bool {
        match self {
            FeatureMask::Full => true,
            FeatureMask::TextOnly => column < 2 * POOL_DIM,
            FeatureMask::NoText => column >= 2 * POOL_DIM,
        }
    }
}

impl std::str::FromStr for FeatureMask {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Self::Full),
            "text-only" => Ok(Self::TextOnly),
            "no-text" => Ok(Self::NoText),
            other => Err(format!("unknown feature mask `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Comment, ConversationTree};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pool_singleton() {
        let p = pool(&[0.7]).unwrap();
        for v in [p.max, p.min, p.mean, p.median, p.p25, p.p75, p.p95, p.sum_top3, p.mean_top3] {
            assert_eq!(v, 0.7);
        }
        assert_eq!(p.std, 0.0);
    }

    #[test]
    fn pool_empty_is_zero() {
        assert_eq!(pool(&[]).unwrap(), PoolBlock::default());
    }

    #[test]
    fn pool_four_values() {
        let p = pool(&[0.9, 0.1, 0.5, 0.3]).unwrap();
        assert!(close(p.mean, 0.45));
        assert!(close(p.median, 0.4));
        assert_eq!((p.max, p.min), (0.9, 0.1));
        assert!(close(p.sum_top3, 1.7));
        assert!(close(p.mean_top3, 1.7 / 3.0));
        // Hand-computed: var = (0.1225 + 0.0225 + 0.0025 + 0.2025) / 4.
        assert!(close(p.std, 0.0875f64.sqrt()));
        assert!(close(p.p25, 0.25));
        assert!(close(p.p75, 0.6));
        assert!(close(p.p95, 0.84));
    }

    #[test]
    fn pool_rejects_out_of_range() {
        assert!(matches!(pool(&[0.5, 1.2]), Err(FeatureError::Domain(_))));
        assert!(matches!(pool(&[f64::NAN]), Err(FeatureError::Domain(_))));
    }

    fn tree_with(parents: &[Option<usize>], authors: &[&str], times: &[i64]) -> ConversationTree {
        let comments = parents
            .iter()
            .enumerate()
            .map(|(i, p)| Comment {
                id: format!("n{i}"),
                conversation_id: "c".into(),
                parent_id: p.map(|p| format!("n{p}")),
                author: authors[i].into(),
                timestamp: times[i],
                text: String::new(),
            })
            .collect();
        ConversationTree::from_comments(comments).unwrap()
    }

    #[test]
    fn chain_context() {
        let t = tree_with(&[None, Some(0), Some(1)], &["op", "b", "c"], &[0, 1, 2]);
        let p = t.prefix(3).unwrap();
        let ctx = context_features(&p, "op", 5).unwrap();
        assert_eq!(ctx.is_op_author, 1.0);
        assert_eq!(ctx.leaf_intermediate_ratio, 0.5);
        assert!(close(ctx.author_node_ratio, 1.0 / 3.0));
        // Node 1 is intermediate and replies to op.
        assert_eq!(ctx.replies_to_author_intermediates, 1.0);
        assert_eq!(ctx.replies_to_author_leaves, 0.0);
    }

    #[test]
    fn timed_context() {
        // 0 -> 1 -> 2, 0 -> 3; leaves {2, 3}, intermediates {0, 1}.
        let t = tree_with(&[None, Some(0), Some(1), Some(0)], &["a", "b", "a", "c"], &[0, 10, 20, 30]);
        let p = t.prefix(4).unwrap();
        let ctx = context_features(&p, "b", 60).unwrap();
        assert_eq!(ctx.time_from_root, 60.0);
        assert_eq!(ctx.mean_time_diff_leaves, (40.0 + 30.0) / 2.0);
        assert_eq!(ctx.mean_time_diff_intermediates, (60.0 + 50.0) / 2.0);
        assert_eq!(ctx.mean_depth_leaves, 1.5);
        assert_eq!(ctx.mean_depth_intermediates, 0.5);
        // Levels: {a}, {b, c}, {a} -> 1, 2, 1.
        assert!(close(ctx.mean_unique_authors, 4.0 / 3.0));
        assert_eq!(ctx.median_unique_authors, 1.0);
        // Node 2 (leaf) replies to b.
        assert_eq!(ctx.replies_to_author_leaves, 1.0);
        assert!(matches!(
            context_features(&t.prefix(1).unwrap(), "a", 5),
            Err(FeatureError::InvalidInstance(1))
        ));
        assert!(matches!(
            context_features(&p, "a", -1),
            Err(FeatureError::TimestampBeforeRoot { .. })
        ));
    }

    #[test]
    fn window_cases() {
        let chain = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1), Some(2), Some(3)]);
        let p = chain.prefix(5).unwrap();
        assert_eq!(relaxation_window(&p, Some(1)).unwrap(), [0, 1, 2, 3, 4]);

        // Root with three chains of length two, created one chain at a time.
        let t = ConversationTree::from_parent_indices(
            "t",
            &[None, Some(0), Some(1), Some(0), Some(3), Some(0), Some(5)],
        );
        let p = t.prefix(7).unwrap();
        assert_eq!(relaxation_window(&p, Some(2)).unwrap(), [0, 3, 4, 5, 6]);
        assert_eq!(relaxation_window(&p, Some(3)).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(relaxation_window(&p, None).unwrap(), (0..7).collect::<Vec<_>>());
        assert!(relaxation_window(&p, Some(0)).is_err());
    }

    #[test]
    fn assemble_single_leaf_window() {
        let chain = ConversationTree::from_parent_indices("c", &[None, Some(0), Some(1), Some(2)]);
        let p = chain.prefix(3).unwrap();
        let scores = BTreeMap::from([(2, 0.8)]);
        let fv = assemble_feature_vector(&p, "x", 10, &scores, &[2]).unwrap();
        assert_eq!(fv.intermediate_pool, PoolBlock::default());
        assert_eq!(fv.leaf_pool.max, 0.8);
        assert!(matches!(
            assemble_feature_vector(&p, "x", 10, &scores, &[1, 2]),
            Err(FeatureError::MissingScore(1))
        ));
    }

    #[test]
    fn mask_columns() {
        assert!(FeatureMask::TextOnly.keeps(19) && !FeatureMask::TextOnly.keeps(20));
        assert!(FeatureMask::NoText.keeps(20) && !FeatureMask::NoText.keeps(0));
        assert_eq!("no-text".parse::<FeatureMask>().unwrap(), FeatureMask::NoText);
    }
}
