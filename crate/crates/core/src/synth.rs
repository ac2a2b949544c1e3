//! Synthetic conversation corpora with controllable branching rate and
//! optional planted signals.
//!
//! The first branch instance of every tree is necessarily a leaf reply (no
//! non-root node has a child yet). Later instances branch with the
//! propensity rescaled by `N / (N - 1)` so the expected positive rate over a
//! tree's `N` instances equals the configured propensity.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tree::Comment;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub trees: usize,
    /// Inclusive node-count range per tree.
    pub min_size: usize,
    pub max_size: usize,
    /// Target fraction of branch instances labelled 1.
    pub branching: f64,
    /// Probability that a non-root comment replies directly to the root.
    pub root_reply_prob: f64,
    pub authors: usize,
    /// Probability that an instance's author follows the planted rule:
    /// branching comments by the original poster, leaf replies by others.
    pub context_signal: f64,
    /// Swap the planted author rule.
    pub invert_context: bool,
    /// Probability that a comment repeats its parent's keyword.
    pub text_signal: f64,
    pub vocabulary: usize,
    pub id_prefix: String,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            min_size: 10,
            max_size: 30,
            branching: 0.3,
            root_reply_prob: 0.1,
            authors: 20,
            context_signal: 0.0,
            invert_context: false,
            text_signal: 0.0,
            vocabulary: 300,
            id_prefix: "c".into(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.min_size < 3 {
            return bad(format!("min_size must be at least 3, got {}", self.min_size));
        }
        if self.max_size < self.min_size {
            return bad(format!("max_size {} below min_size {}", self.max_size, self.min_size));
        }
        if self.trees == 0 {
            return bad("trees must be positive".into());
        }
        if self.authors < 2 {
            return bad("need at least two authors".into());
        }
        if self.vocabulary == 0 {
            return bad("vocabulary must be positive".into());
        }
        for (name, p) in [
            ("branching", self.branching),
            ("root_reply_prob", self.root_reply_prob),
            ("context_signal", self.context_signal),
            ("text_signal", self.text_signal),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.root_reply_prob == 1.0 {
            return bad("root_reply_prob 1 leaves no branch instances".into());
        }
        Ok(())
    }
}

/// What was generated, written next to the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub config: SynthConfig,
    pub comments: usize,
    pub instances: usize,
    pub positives: usize,
    pub positive_rate: f64,
    pub planted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub comments: Vec<Comment>,
    pub metadata: SynthMetadata,
}

impl SynthCorpus {
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for c in &self.comments {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

fn keyword(conv: usize, node: usize) -> String {
    format!("kw{conv}x{node}")
}

struct TreeState {
    parents: Vec<Option<usize>>,
    has_child: Vec<bool>,
    levels: Vec<usize>,
}

impl TreeState {
    fn push(&mut self, parent: usize) -> usize {
        self.has_child[parent] = true;
        self.parents.push(Some(parent));
        self.has_child.push(false);
        self.levels.push(self.levels[parent] + 1);
        self.parents.len() - 1
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let authors: Vec<String> = (0..config.authors).map(|a| format!("user{a}")).collect();
    let mut comments = Vec::new();
    let (mut instances, mut positives) = (0, 0);

    for conv in 0..config.trees {
        let size = rng.gen_range(config.min_size..=config.max_size);
        let conv_id = format!("{}{conv}", config.id_prefix);
        let op = rng.gen_range(0..authors.len());

        // Node 1 always answers the root; later nodes do so with root_reply_prob.
        let roles: Vec<bool> = (0..size)
            .map(|i| i >= 2 && rng.gen::<f64>() >= config.root_reply_prob)
            .collect();
        let n_inst = roles.iter().filter(|&&r| r).count();
        let later_p = if n_inst > 1 {
            (config.branching * n_inst as f64 / (n_inst - 1) as f64).min(1.0)
        } else {
            0.0
        };

        let mut st = TreeState {
            parents: vec![None],
            has_child: vec![false],
            levels: vec![0],
        };
        let mut node_authors = vec![op];
        let mut seen_instance = false;
        for &is_instance in &roles[1..] {
            let (node, label) = if !is_instance {
                (st.push(0), None)
            } else {
                let branch = seen_instance && rng.gen::<f64>() < later_p;
                seen_instance = true;
                let candidates: Vec<usize> = (1..st.parents.len())
                    .filter(|&v| st.has_child[v] == branch)
                    .collect();
                let parent = *candidates.choose(&mut rng).expect("a leaf or non-root intermediate exists");
                (st.push(parent), Some(u8::from(branch)))
            };
            let author = match label {
                Some(y) if rng.gen::<f64>() < config.context_signal => {
                    if (y == 1) != config.invert_context {
                        op
                    } else {
                        let mut a = rng.gen_range(0..authors.len() - 1);
                        if a >= op {
                            a += 1;
                        }
                        a
                    }
                }
                _ => rng.gen_range(0..authors.len()),
            };
            node_authors.push(author);
            if let Some(y) = label {
                instances += 1;
                positives += y as usize;
            }
            debug_assert_eq!(node, node_authors.len() - 1);
        }

        let mut ts = 1_600_000_000 + conv as i64 * 1_000_000;
        for (i, parent) in st.parents.iter().enumerate() {
            let n_words = rng.gen_range(8..=20);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| format!("w{}", rng.gen_range(0..config.vocabulary)))
                .collect();
            words.push(keyword(conv, i));
            if let Some(p) = parent {
                if rng.gen::<f64>() < config.text_signal {
                    words.push(keyword(conv, *p));
                }
            }
            words.shuffle(&mut rng);
            comments.push(Comment {
                id: format!("{conv_id}-{i:04}"),
                conversation_id: conv_id.clone(),
                parent_id: parent.map(|p| format!("{conv_id}-{p:04}")),
                author: authors[node_authors[i]].clone(),
                timestamp: ts,
                text: words.join(" "),
            });
            ts += rng.gen_range(1..=600);
        }
    }

    let mut planted = Vec::new();
    if config.context_signal > 0.0 {
        planted.push(format!(
            "context: with probability {} branching comments are by the original poster and leaf replies are not{}",
            config.context_signal,
            if config.invert_context { " (inverted)" } else { "" }
        ));
    }
    if config.text_signal > 0.0 {
        planted.push(format!(
            "text: with probability {} a comment repeats its parent's unique keyword",
            config.text_signal
        ));
    }
    Ok(SynthCorpus {
        metadata: SynthMetadata {
            config: config.clone(),
            comments: comments.len(),
            instances,
            positives,
            positive_rate: if instances > 0 { positives as f64 / instances as f64 } else { 0.0 },
            planted,
        },
        comments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{parse_corpus, FilterConfig};

    #[test]
    fn generated_corpus_parses() {
        let cfg = SynthConfig {
            trees: 50,
            min_size: 10,
            max_size: 30,
            ..SynthConfig::default()
        };
        let s = generate(&cfg).unwrap();
        let out = parse_corpus(s.to_jsonl().as_bytes(), &FilterConfig::default()).unwrap();
        assert_eq!(out.corpus.len(), 50);
        assert!(out.rejected.is_empty());
        let labels: usize = out
            .corpus
            .trees
            .iter()
            .flat_map(|t| t.enumerate_instances())
            .map(|i| i.label as usize)
            .sum();
        assert_eq!(labels, s.metadata.positives);
    }

    #[test]
    fn zero_propensity_never_branches() {
        let cfg = SynthConfig {
            branching: 0.0,
            trees: 20,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap().metadata.positives, 0);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let cfg = SynthConfig {
            min_size: 2,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(SynthError::Config(_))));
    }

    #[test]
    fn same_seed_same_corpus() {
        let cfg = SynthConfig {
            trees: 5,
            text_signal: 0.5,
            context_signal: 0.5,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
    }
}
