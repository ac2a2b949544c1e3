//! Reply-pair datasets: direct replies as positives, unconnected
//! same-conversation pairs as negatives.

use std::io::{BufRead, Write};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ScoreError;
use crate::corpus::Corpus;
use crate::tree::ConversationTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplyPair {
    pub conversation_id: String,
    /// Id of the candidate parent (`text_a`).
    pub parent_id: String,
    /// Id of the candidate child (`text_b`).
    pub child_id: String,
    pub text_a: String,
    pub text_b: String,
    pub label: u8,
}

/// Build the pair dataset for scorer training.
///
/// Every reply edge becomes a positive. `ceil(negative_ratio * positives)`
/// negatives are drawn without replacement from all ordered pairs
/// `(earlier, later)` of the same conversation that are not an edge.
/// Conversations with fewer than three comments contribute no negatives.
pub fn build_pair_dataset(
    corpus: &Corpus,
    negative_ratio: f64,
    seed: u64,
) -> Result<Vec<ReplyPair>, ScoreError> {
    if corpus.is_empty() {
        return Err(ScoreError::EmptyCorpus);
    }
    if !(negative_ratio > 0.0 && negative_ratio.is_finite()) {
        return Err(ScoreError::InvalidRatio(negative_ratio));
    }
    let mut pairs = Vec::new();
    // Non-edge pairs per conversation: all m(m-1)/2 ordered pairs minus m-1 edges.
    let mut offsets = Vec::with_capacity(corpus.len() + 1);
    offsets.push(0usize);
    for tree in &corpus.trees {
        for (p, c) in tree.edges() {
            pairs.push(make_pair(tree, p, c, 1));
        }
        let m = tree.len();
        let count = if m < 3 {
            log::warn!(
                "conversation {} has {m} comments, no negative pairs",
                tree.conversation_id()
            );
            0
        } else {
            m * (m - 1) / 2 - (m - 1)
        };
        offsets.push(offsets.last().unwrap() + count);
    }
    let total = *offsets.last().unwrap();
    let wanted = (negative_ratio * pairs.len() as f64).ceil() as usize;
    if wanted > total {
        log::warn!("requested {wanted} negatives but only {total} candidates exist");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, total, wanted.min(total)).into_vec();
    picked.sort_unstable();

    let mut next = 0;
    for (t, tree) in corpus.trees.iter().enumerate() {
        let end = offsets[t + 1];
        if next >= picked.len() || picked[next] >= end {
            continue;
        }
        let candidates: Vec<(usize, usize)> = (1..tree.len())
            .flat_map(|b| (0..b).map(move |a| (a, b)))
            .filter(|&(a, b)| tree.parent(b) != Some(a))
            .collect();
        while next < picked.len() && picked[next] < end {
            let (a, b) = candidates[picked[next] - offsets[t]];
            pairs.push(make_pair(tree, a, b, 0));
            next += 1;
        }
    }
    Ok(pairs)
}

fn make_pair(tree: &ConversationTree, parent: usize, child: usize, label: u8) -> ReplyPair {
    let (a, b) = (tree.node(parent), tree.node(child));
    ReplyPair {
        conversation_id: tree.conversation_id().to_string(),
        parent_id: a.id.clone(),
        child_id: b.id.clone(),
        text_a: a.text.clone(),
        text_b: b.text.clone(),
        label,
    }
}

pub fn write_pairs<W: Write>(pairs: &[ReplyPair], mut out: W) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_pairs<R: BufRead>(input: R) -> Result<Vec<ReplyPair>, ScoreError> {
    let mut pairs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line)
            .map_err(|e| ScoreError::Format(format!("pair file line {}: {e}", i + 1)))?;
        pairs.push(pair);
    }
    Ok(pairs)
}
