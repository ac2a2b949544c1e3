//! JSONL corpus ingestion, filtering and corpus-level statistics.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::{mean, median};
use crate::tree::{Comment, ConversationTree, TreeError};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed comment record: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corpus is empty")]
    Empty,
}

/// Which comments and conversations survive ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Conversations with fewer surviving comments are dropped.
    pub min_comments: usize,
    pub bot_authors: Vec<String>,
    pub deletion_markers: Vec<String>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_comments: 10,
            bot_authors: vec!["DeltaBot".into(), "AutoModerator".into()],
            deletion_markers: vec!["[deleted]".into(), "[removed]".into()],
        }
    }
}

/// A conversation that failed structural validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub conversation_id: String,
    pub reason: TreeError,
}

/// Everything `parse_corpus` learned about its input.
#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub corpus: Corpus,
    pub rejected: Vec<Rejection>,
    /// Conversations dropped by the size filter or because the root was removed.
    pub dropped: Vec<String>,
    /// Comments removed by the deletion and bot filters, descendants included.
    pub removed_comments: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub trees: Vec<ConversationTree>,
}

impl Corpus {
    pub fn new(trees: Vec<ConversationTree>) -> Self {
        Self { trees }
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn comment_count(&self) -> usize {
        self.trees.iter().map(ConversationTree::len).sum()
    }

    /// Write every comment as one JSONL record, conversations in corpus
    /// order and comments in creation order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for tree in &self.trees {
            for c in tree.nodes() {
                serde_json::to_writer(&mut out, c)?;
                out.write_all(b"\n")?;
            }
        }
        out.flush()
    }
}

/// Read a JSONL comment stream into validated conversation trees.
///
/// Conversations keep the order of their first appearance in the stream.
/// Blank lines are skipped and unknown fields ignored.
pub fn parse_corpus<R: BufRead>(input: R, filter: &FilterConfig) -> Result<ParseOutcome, CorpusError> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Comment>> = HashMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let comment: Comment =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        groups
            .entry(comment.conversation_id.clone())
            .or_insert_with(|| {
                order.push(comment.conversation_id.clone());
                Vec::new()
            })
            .push(comment);
    }

    let mut outcome = ParseOutcome::default();
    let mut owner: HashMap<String, String> = HashMap::new();
    for conv in order {
        let comments = groups.remove(&conv).expect("grouped above");
        if let Some(c) = comments
            .iter()
            .find(|c| owner.get(&c.id).is_some_and(|o| *o != conv))
        {
            outcome.rejected.push(Rejection {
                conversation_id: conv,
                reason: TreeError::DuplicateId(c.id.clone()),
            });
            continue;
        }
        for c in &comments {
            owner.insert(c.id.clone(), conv.clone());
        }
        let tree = match ConversationTree::from_comments(comments) {
            Ok(t) => t,
            Err(reason) => {
                log::warn!("rejecting conversation {conv}: {reason}");
                outcome.rejected.push(Rejection {
                    conversation_id: conv,
                    reason,
                });
                continue;
            }
        };
        let (kept, removed) = filter_comments(&tree, filter);
        outcome.removed_comments += removed;
        if kept.is_empty() || kept.len() < filter.min_comments {
            outcome.dropped.push(conv);
            continue;
        }
        match ConversationTree::from_comments(kept) {
            Ok(t) => outcome.corpus.trees.push(t),
            Err(reason) => outcome.rejected.push(Rejection {
                conversation_id: conv,
                reason,
            }),
        }
    }
    Ok(outcome)
}

/// Remove deleted and bot comments together with their subtrees.
fn filter_comments(tree: &ConversationTree, filter: &FilterConfig) -> (Vec<Comment>, usize) {
    let bots: HashSet<&str> = filter.bot_authors.iter().map(String::as_str).collect();
    let markers: HashSet<&str> = filter.deletion_markers.iter().map(String::as_str).collect();
    let mut dropped = vec![false; tree.len()];
    for (i, c) in tree.nodes().iter().enumerate() {
        let inherited = tree.parent(i).is_some_and(|p| dropped[p]);
        dropped[i] = inherited || markers.contains(c.text.as_str()) || bots.contains(c.author.as_str());
    }
    let kept: Vec<Comment> = tree
        .nodes()
        .iter()
        .zip(&dropped)
        .filter(|(_, d)| !**d)
        .map(|(c, _)| c.clone())
        .collect();
    let removed = tree.len() - kept.len();
    (kept, removed)
}

/// Per-conversation corpus statistics.
///
/// The first eight keys follow the usual dataset-statistics table. The
/// remaining keys are supplementary and deliberately named apart from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(rename = "# Conversations")]
    pub conversations: usize,
    #[serde(rename = "# Comments")]
    pub comments: usize,
    #[serde(rename = "Mean # nodes")]
    pub mean_nodes: f64,
    #[serde(rename = "Med. # nodes")]
    pub median_nodes: f64,
    #[serde(rename = "Mean depth")]
    pub mean_depth: f64,
    #[serde(rename = "Med. depth")]
    pub median_depth: f64,
    /// Mean number of distinct authors per conversation.
    #[serde(rename = "# Authors")]
    pub authors: f64,
    /// Mean number of branching comments (level two or deeper) per conversation.
    #[serde(rename = "# Branches")]
    pub branches: f64,
    /// Branches plus every first-level reply after the first one.
    #[serde(rename = "# Branches incl. first level")]
    pub branches_with_first_level: f64,
    /// Mean over conversations of the mean child count of non-leaf nodes.
    #[serde(rename = "Mean children per non-leaf")]
    pub mean_children_per_nonleaf: f64,
    /// Mean over conversations of leaves / nodes.
    #[serde(rename = "Leaf ratio")]
    pub leaf_ratio: f64,
}

pub fn corpus_stats(corpus: &Corpus) -> Result<StatsReport, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut nodes = Vec::new();
    let mut depths = Vec::new();
    let mut authors = Vec::new();
    let mut branches = Vec::new();
    let mut branches_all = Vec::new();
    let mut fanout = Vec::new();
    let mut leaf_ratio = Vec::new();
    for tree in &corpus.trees {
        nodes.push(tree.len() as f64);
        depths.push(tree.depth() as f64);
        let distinct: HashSet<&str> = tree.nodes().iter().map(|c| c.author.as_str()).collect();
        authors.push(distinct.len() as f64);
        let deep = tree
            .enumerate_instances()
            .iter()
            .filter(|i| i.label == 1)
            .count();
        let first_level = tree.children(0).len();
        branches.push(deep as f64);
        branches_all.push((deep + first_level.saturating_sub(1)) as f64);
        let nonleaf: Vec<f64> = (0..tree.len())
            .map(|i| tree.children(i).len())
            .filter(|&c| c > 0)
            .map(|c| c as f64)
            .collect();
        fanout.push(mean(&nonleaf));
        let leaves = (0..tree.len()).filter(|&i| tree.children(i).is_empty()).count();
        leaf_ratio.push(leaves as f64 / tree.len() as f64);
    }
    Ok(StatsReport {
        conversations: corpus.len(),
        comments: corpus.comment_count(),
        mean_nodes: mean(&nodes),
        median_nodes: median(&nodes),
        mean_depth: mean(&depths),
        median_depth: median(&depths),
        authors: mean(&authors),
        branches: mean(&branches),
        branches_with_first_level: mean(&branches_all),
        mean_children_per_nonleaf: mean(&fanout),
        leaf_ratio: mean(&leaf_ratio),
    })
}

impl StatsReport {
    /// Two-column text table, one metric per row.
    pub fn render_table(&self) -> String {
        let rows: [(&str, String); 11] = [
            ("# Conversations", self.conversations.to_string()),
            ("# Comments", self.comments.to_string()),
            ("Mean # nodes", format!("{:.1}", self.mean_nodes)),
            ("Med. # nodes", format!("{}", self.median_nodes)),
            ("Mean depth", format!("{:.1}", self.mean_depth)),
            ("Med. depth", format!("{}", self.median_depth)),
            ("# Authors", format!("{:.1}", self.authors)),
            ("# Branches", format!("{:.1}", self.branches)),
            ("# Branches incl. first level", format!("{:.1}", self.branches_with_first_level)),
            ("Mean children per non-leaf", format!("{:.2}", self.mean_children_per_nonleaf)),
            ("Leaf ratio", format!("{:.2}", self.leaf_ratio)),
        ];
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            out.push_str(&format!("{k:<width$}  {v:>10}\n"));
        }
        out
    }
}
