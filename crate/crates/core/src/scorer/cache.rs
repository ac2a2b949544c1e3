//! Persistent reply-to score cache, one file per corpus.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ReplyScorer, ScoreError, ScoreRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheRecord {
    child: String,
    parent: String,
    score: f64,
    scorer: String,
}

/// Scores keyed by `(child_id, parent_id)`, tagged with the scorer that
/// produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreCache {
    scorer: String,
    scores: BTreeMap<(String, String), f64>,
}

impl ScoreCache {
    pub fn new(scorer: impl Into<String>) -> Self {
        Self {
            scorer: scorer.into(),
            scores: BTreeMap::new(),
        }
    }

    pub fn scorer(&self) -> &str {
        &self.scorer
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn get(&self, child: &str, parent: &str) -> Option<f64> {
        self.scores.get(&(child.to_string(), parent.to_string())).copied()
    }

    /// Store a score. Rewriting a key with a different value is an error.
    pub fn insert(&mut self, child: &str, parent: &str, score: f64) -> Result<(), ScoreError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ScoreError::OutOfRange(score));
        }
        let key = (child.to_string(), parent.to_string());
        match self.scores.get(&key) {
            Some(old) if old.to_bits() != score.to_bits() => Err(ScoreError::CacheConflict {
                child: key.0,
                parent: key.1,
            }),
            Some(_) => Ok(()),
            None => {
                self.scores.insert(key, score);
                Ok(())
            }
        }
    }

    /// Records sorted by key so equal caches serialize identically.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<(), ScoreError> {
        for ((child, parent), score) in &self.scores {
            let rec = CacheRecord {
                child: child.clone(),
                parent: parent.clone(),
                score: *score,
                scorer: self.scorer.clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| ScoreError::Format(e.to_string()))?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Load a cache file. `default_scorer` names the cache when the file is empty.
    pub fn read_jsonl<R: BufRead>(input: R, default_scorer: &str) -> Result<Self, ScoreError> {
        let mut cache: Option<ScoreCache> = None;
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line)
                .map_err(|e| ScoreError::Format(format!("cache line {}: {e}", i + 1)))?;
            let cache = cache.get_or_insert_with(|| ScoreCache::new(rec.scorer.clone()));
            if rec.scorer != cache.scorer {
                return Err(ScoreError::Format(format!(
                    "cache line {}: scorer `{}` differs from `{}`",
                    i + 1,
                    rec.scorer,
                    cache.scorer
                )));
            }
            cache.insert(&rec.child, &rec.parent, rec.score)?;
        }
        Ok(cache.unwrap_or_else(|| ScoreCache::new(default_scorer)))
    }
}

/// Cache-only scoring: every requested pair must already be cached.
pub struct CacheScorer<'c> {
    cache: &'c ScoreCache,
}

impl<'c> CacheScorer<'c> {
    pub fn new(cache: &'c ScoreCache) -> Self {
        Self { cache }
    }
}

impl ReplyScorer for CacheScorer<'_> {
    fn name(&self) -> String {
        self.cache.scorer.clone()
    }

    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError> {
        let mut missing = Vec::new();
        let mut out = Vec::with_capacity(requests.len());
        for r in requests {
            match self.cache.get(r.child_id, r.parent_id) {
                Some(s) => out.push(s),
                None => missing.push((r.child_id.to_string(), r.parent_id.to_string())),
            }
        }
        if missing.is_empty() {
            Ok(out)
        } else {
            Err(ScoreError::MissingScores(missing))
        }
    }
}

/// Wraps any scorer and records each score it produces.
pub struct RecordingScorer<'c, S> {
    inner: S,
    cache: &'c mut ScoreCache,
}

impl<'c, S: ReplyScorer> RecordingScorer<'c, S> {
    pub fn new(inner: S, cache: &'c mut ScoreCache) -> Self {
        Self { inner, cache }
    }
}

impl<S: ReplyScorer> ReplyScorer for RecordingScorer<'_, S> {
    fn name(&self) -> String {
        self.inner.name()
    }

    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError> {
        let mut out = vec![f64::NAN; requests.len()];
        let mut todo = Vec::new();
        for (i, r) in requests.iter().enumerate() {
            match self.cache.get(r.child_id, r.parent_id) {
                Some(s) => out[i] = s,
                None => todo.push(i),
            }
        }
        if !todo.is_empty() {
            let batch: Vec<ScoreRequest<'_>> = todo.iter().map(|&i| requests[i]).collect();
            let scores = self.inner.score_batch(&batch)?;
            for (&i, s) in todo.iter().zip(scores) {
                self.cache.insert(requests[i].child_id, requests[i].parent_id, s)?;
                out[i] = s;
            }
        }
        Ok(out)
    }
}
