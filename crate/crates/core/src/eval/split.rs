use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::corpus::Corpus;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            test_fraction: 0.20,
            val_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

/// Test and validation sizes: rounded fractions, at least one each.
pub fn split_sizes(n: usize, spec: &SplitSpec) -> Result<(usize, usize, usize), EvalError> {
    let fractions_ok = spec.test_fraction > 0.0
        && spec.val_fraction > 0.0
        && spec.test_fraction + spec.val_fraction < 1.0;
    if !fractions_ok {
        return Err(EvalError::SplitConfig(format!(
            "fractions must be positive with sum below 1, got test {} val {}",
            spec.test_fraction, spec.val_fraction
        )));
    }
    if n < 3 {
        return Err(EvalError::TooFewConversations(n));
    }
    let test = ((n as f64 * spec.test_fraction).round() as usize).max(1);
    let val = ((n as f64 * spec.val_fraction).round() as usize).max(1);
    if test + val >= n {
        return Err(EvalError::TooFewConversations(n));
    }
    Ok((n - test - val, val, test))
}

/// Seeded shuffle of whole items (conversations) into train/val/test.
/// Each split keeps the input order of its items.
pub fn split_items<T>(items: Vec<T>, spec: &SplitSpec) -> Result<Split<T>, EvalError> {
    let (_, n_val, n_test) = split_sizes(items.len(), spec)?;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    // 0 = train, 1 = val, 2 = test
    let mut assignment = vec![0u8; items.len()];
    for &i in &order[..n_test] {
        assignment[i] = 2;
    }
    for &i in &order[n_test..n_test + n_val] {
        assignment[i] = 1;
    }
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (item, a) in items.into_iter().zip(assignment) {
        match a {
            2 => split.test.push(item),
            1 => split.val.push(item),
            _ => split.train.push(item),
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSplit {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
}

/// Conversation-level split of a corpus.
pub fn split_by_conversation(corpus: &Corpus, spec: &SplitSpec) -> Result<CorpusSplit, EvalError> {
    let s = split_items(corpus.trees.clone(), spec)?;
    Ok(CorpusSplit {
        train: Corpus::new(s.train),
        val: Corpus::new(s.val),
        test: Corpus::new(s.test),
    })
}
