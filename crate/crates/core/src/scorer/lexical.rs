//! Built-in reply-to scorer: logistic regression over four lexical pair
//! features (tf-idf cosine, token Jaccard, length ratio, shared rare tokens).

use std::collections::{BTreeMap, HashMap, HashSet};
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pairs::ReplyPair;
use super::{ReplyScorer, ScoreError, ScoreRequest};
use crate::eval::roc_auc;

/// Whitespace tokens kept per text before tokenization.
pub const MAX_TEXT_TOKENS: usize = 512;
pub const PAIR_FEATURES: usize = 4;

/// Lowercase, split on non-alphanumeric runs and keep tokens of two or more
/// characters, after truncating to the first 512 whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace().take(MAX_TEXT_TOKENS) {
        for piece in word.split(|c: char| !c.is_alphanumeric()) {
            if piece.chars().count() >= 2 {
                tokens.push(piece.to_lowercase());
            }
        }
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LexicalHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    /// Fraction of pairs held out to report accuracy and AUC.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for LexicalHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 2000,
            l2: 1e-4,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalScorerModel {
    /// Token -> document frequency index, frozen after training.
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    /// Weight for tokens never seen during training.
    pub unseen_idf: f64,
    /// Tokens with at least this idf count as rare.
    pub rare_idf: f64,
    pub weights: [f64; PAIR_FEATURES],
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerTrainReport {
    pub train_accuracy: f64,
    pub holdout_accuracy: Option<f64>,
    pub holdout_auc: Option<f64>,
    pub epochs_run: usize,
}

/// A text reduced to term frequencies and its tf-idf norm.
#[derive(Debug, Clone)]
pub struct PreparedText {
    counts: BTreeMap<String, f64>,
    token_count: usize,
    norm: f64,
}

impl LexicalScorerModel {
    fn idf_of(&self, token: &str) -> f64 {
        self.vocabulary
            .get(token)
            .map_or(self.unseen_idf, |&i| self.idf[i])
    }

    pub fn prepare(&self, text: &str) -> PreparedText {
        let tokens = tokenize(text);
        let mut counts = BTreeMap::new();
        for t in &tokens {
            *counts.entry(t.clone()).or_insert(0.0) += 1.0;
        }
        let norm = counts
            .iter()
            .map(|(t, tf)| (tf * self.idf_of(t)).powi(2))
            .sum::<f64>()
            .sqrt();
        PreparedText {
            counts,
            token_count: tokens.len(),
            norm,
        }
    }

    pub fn pair_features(&self, a: &PreparedText, b: &PreparedText) -> [f64; PAIR_FEATURES] {
        let (small, large) = if a.counts.len() <= b.counts.len() { (a, b) } else { (b, a) };
        let mut dot = 0.0;
        let mut shared = 0usize;
        let mut shared_rare = 0usize;
        for (t, tf) in &small.counts {
            if let Some(tf2) = large.counts.get(t) {
                let idf = self.idf_of(t);
                dot += tf * tf2 * idf * idf;
                shared += 1;
                if idf >= self.rare_idf {
                    shared_rare += 1;
                }
            }
        }
        let cosine = if a.norm > 0.0 && b.norm > 0.0 {
            (dot / (a.norm * b.norm)).min(1.0)
        } else {
            0.0
        };
        let union = a.counts.len() + b.counts.len() - shared;
        let jaccard = if union > 0 { shared as f64 / union as f64 } else { 0.0 };
        let longest = a.token_count.max(b.token_count);
        let length_ratio = if longest > 0 {
            a.token_count.min(b.token_count) as f64 / longest as f64
        } else {
            0.0
        };
        [cosine, jaccard, length_ratio, (shared_rare as f64).ln_1p()]
    }

    pub fn score_features(&self, f: &[f64; PAIR_FEATURES]) -> f64 {
        let z = self.bias + self.weights.iter().zip(f).map(|(w, x)| w * x).sum::<f64>();
        sigmoid(z)
    }

    pub fn score_prepared(&self, a: &PreparedText, b: &PreparedText) -> f64 {
        self.score_features(&self.pair_features(a, b))
    }
}

/// Reply-to probability that `text_b` answers `text_a`.
pub fn score_pair(model: &LexicalScorerModel, text_a: &str, text_b: &str) -> f64 {
    model.score_prepared(&model.prepare(text_a), &model.prepare(text_b))
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn memo_prepare<'a>(
    cache: &mut HashMap<&'a str, Rc<PreparedText>>,
    model: &LexicalScorerModel,
    text: &'a str,
) -> Rc<PreparedText> {
    cache.entry(text).or_insert_with(|| Rc::new(model.prepare(text))).clone()
}

/// Fit vocabulary, idf and logistic-regression weights on a pair dataset.
pub fn train_lexical_scorer(
    pairs: &[ReplyPair],
    hyper: &LexicalHyper,
) -> Result<(LexicalScorerModel, ScorerTrainReport), ScoreError> {
    let positives = pairs.iter().filter(|p| p.label == 1).count();
    if positives == 0 || positives == pairs.len() {
        return Err(ScoreError::SingleClass);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(hyper.seed));
    let held = ((pairs.len() as f64) * hyper.holdout_fraction.clamp(0.0, 0.5)).round() as usize;
    let (holdout, train) = order.split_at(held);
    let train_pairs: Vec<&ReplyPair> = train.iter().map(|&i| &pairs[i]).collect();
    if !train_pairs.iter().any(|p| p.label == 1) || train_pairs.iter().all(|p| p.label == 1) {
        return Err(ScoreError::SingleClass);
    }

    let mut model = fit_idf(&train_pairs);
    let mut cache: HashMap<&str, Rc<PreparedText>> = HashMap::new();
    let mut featurize = |i: usize| {
        let p = &pairs[i];
        let a = memo_prepare(&mut cache, &model, &p.text_a);
        let b = memo_prepare(&mut cache, &model, &p.text_b);
        model.pair_features(&a, &b)
    };
    let x_train: Vec<[f64; PAIR_FEATURES]> = train.iter().map(|&i| featurize(i)).collect();
    let x_hold: Vec<[f64; PAIR_FEATURES]> = holdout.iter().map(|&i| featurize(i)).collect();
    let y_train: Vec<f64> = train.iter().map(|&i| f64::from(pairs[i].label)).collect();

    let n = x_train.len() as f64;
    let mut epochs_run = 0;
    for _ in 0..hyper.epochs {
        epochs_run += 1;
        let mut grad_w = [0.0; PAIR_FEATURES];
        let mut grad_b = 0.0;
        for (x, y) in x_train.iter().zip(&y_train) {
            let err = model.score_features(x) - y;
            for (g, xi) in grad_w.iter_mut().zip(x) {
                *g += err * xi;
            }
            grad_b += err;
        }
        let mut norm = 0.0;
        for (g, w) in grad_w.iter_mut().zip(&model.weights) {
            *g = *g / n + hyper.l2 * w;
            norm += *g * *g;
        }
        grad_b /= n;
        norm += grad_b * grad_b;
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= hyper.learning_rate * g;
        }
        model.bias -= hyper.learning_rate * grad_b;
        if norm.sqrt() < 1e-7 {
            break;
        }
    }

    let accuracy = |xs: &[[f64; PAIR_FEATURES]], idx: &[usize]| {
        let correct = xs
            .iter()
            .zip(idx)
            .filter(|(x, &i)| (model.score_features(x) >= 0.5) == (pairs[i].label == 1))
            .count();
        correct as f64 / xs.len() as f64
    };
    let train_accuracy = accuracy(&x_train, train);
    let (holdout_accuracy, holdout_auc) = if holdout.is_empty() {
        (None, None)
    } else {
        let scores: Vec<f64> = x_hold.iter().map(|x| model.score_features(x)).collect();
        let labels: Vec<u8> = holdout.iter().map(|&i| pairs[i].label).collect();
        (Some(accuracy(&x_hold, holdout)), roc_auc(&scores, &labels).ok())
    };
    Ok((
        model,
        ScorerTrainReport {
            train_accuracy,
            holdout_accuracy,
            holdout_auc,
            epochs_run,
        },
    ))
}

/// Smoothed idf over the distinct texts of the training pairs.
fn fit_idf(pairs: &[&ReplyPair]) -> LexicalScorerModel {
    let mut docs: HashSet<&str> = HashSet::new();
    for p in pairs {
        docs.insert(&p.text_a);
        docs.insert(&p.text_b);
    }
    let mut df: BTreeMap<String, usize> = BTreeMap::new();
    for doc in &docs {
        let distinct: HashSet<String> = tokenize(doc).into_iter().collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    let n_docs = docs.len() as f64;
    let mut vocabulary = BTreeMap::new();
    let mut idf = Vec::with_capacity(df.len());
    for (i, (t, d)) in df.into_iter().enumerate() {
        vocabulary.insert(t, i);
        idf.push(((1.0 + n_docs) / (1.0 + d as f64)).ln() + 1.0);
    }
    let mut sorted = idf.clone();
    sorted.sort_by(f64::total_cmp);
    let rare_idf = if sorted.is_empty() {
        f64::INFINITY
    } else {
        crate::stats::percentile_sorted(&sorted, 0.75)
    };
    LexicalScorerModel {
        vocabulary,
        idf,
        unseen_idf: (1.0 + n_docs).ln() + 1.0,
        rare_idf,
        weights: [0.0; PAIR_FEATURES],
        bias: 0.0,
    }
}

/// [`ReplyScorer`] backed by a trained lexical model. Prepared texts are
/// memoized, so scoring many candidates for the same comment stays cheap.
pub struct LexicalScorer<'m> {
    model: &'m LexicalScorerModel,
    prepared: HashMap<String, Rc<PreparedText>>,
}

impl<'m> LexicalScorer<'m> {
    pub fn new(model: &'m LexicalScorerModel) -> Self {
        Self {
            model,
            prepared: HashMap::new(),
        }
    }

    fn prepared(&mut self, text: &str) -> Rc<PreparedText> {
        if let Some(p) = self.prepared.get(text) {
            return p.clone();
        }
        let p = Rc::new(self.model.prepare(text));
        self.prepared.insert(text.to_string(), p.clone());
        p
    }
}

impl ReplyScorer for LexicalScorer<'_> {
    fn name(&self) -> String {
        "lexical-v1".into()
    }

    fn score_batch(&mut self, requests: &[ScoreRequest<'_>]) -> Result<Vec<f64>, ScoreError> {
        Ok(requests
            .iter()
            .map(|r| {
                let a = self.prepared(r.text_a);
                let b = self.prepared(r.text_b);
                self.model.score_prepared(&a, &b)
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(a: &str, b: &str, label: u8) -> ReplyPair {
        ReplyPair {
            conversation_id: "c".into(),
            parent_id: "p".into(),
            child_id: "q".into(),
            text_a: a.into(),
            text_b: b.into(),
            label,
        }
    }

    fn zero_model() -> LexicalScorerModel {
        LexicalScorerModel {
            vocabulary: BTreeMap::new(),
            idf: vec![],
            unseen_idf: 1.0,
            rare_idf: 1.0,
            weights: [0.0; PAIR_FEATURES],
            bias: 0.0,
        }
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Hello, World! a b2 x-ray"), ["hello", "world", "b2", "ray"]);
        let long = "w ".repeat(600) + "tail";
        assert!(tokenize(&long).is_empty());
    }

    #[test]
    fn zero_model_scores_half() {
        assert_eq!(score_pair(&zero_model(), "anything here", "else"), 0.5);
        assert_eq!(score_pair(&zero_model(), "", ""), 0.5);
    }

    #[test]
    fn separable_pairs_train_to_full_accuracy() {
        let mut pairs = Vec::new();
        for i in 0..100 {
            let t = format!("topic{i} alpha{i} beta{i}");
            pairs.push(pair(&t, &t, 1));
            pairs.push(pair(&t, &format!("other{i} words{i} here{i}"), 0));
        }
        let (model, report) = train_lexical_scorer(&pairs, &LexicalHyper::default()).unwrap();
        assert!(report.train_accuracy >= 0.99, "{report:?}");
        assert!(model.weights[0] >= 0.0);
        let same = score_pair(&model, "topic3 alpha3", "topic3 alpha3");
        let disjoint = score_pair(&model, "topic3 alpha3", "zzz yyy");
        assert!(same >= disjoint);
    }

    #[test]
    fn single_class_is_an_error() {
        let pairs = vec![pair("a b", "a b", 1), pair("c d", "c d", 1)];
        assert!(matches!(
            train_lexical_scorer(&pairs, &LexicalHyper::default()),
            Err(ScoreError::SingleClass)
        ));
    }

    #[test]
    fn scoring_is_deterministic() {
        let pairs = vec![pair("aa bb", "aa bb", 1), pair("aa bb", "cc dd", 0), pair("ee", "ee ff", 1), pair("gg", "hh", 0)];
        let hyper = LexicalHyper {
            holdout_fraction: 0.0,
            ..LexicalHyper::default()
        };
        let (model, _) = train_lexical_scorer(&pairs, &hyper).unwrap();
        assert_eq!(score_pair(&model, "aa cc", "aa"), score_pair(&model, "aa cc", "aa"));
    }
}
