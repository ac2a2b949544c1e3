//! Conversation-level splits, classification metrics, transfer evaluation
//! and permutation importance.

mod importance;
mod metrics;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMatrix, FEATURE_NAMES};
use crate::model::{BranchClassifier, ModelError};

pub use importance::{permutation_importance, FeatureImportance, ImportanceReport};
pub use metrics::{compute_metrics, roc_auc, roc_curve, MetricsReport, RocPoint};
pub use split::{split_by_conversation, split_items, split_sizes, CorpusSplit, Split, SplitSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("no instances to evaluate")]
    Empty,
    #[error("label {0} is not binary")]
    NonBinaryLabel(u8),
    #[error("scores contain NaN")]
    NanScore,
    /// AUC is undefined; the threshold metrics that are defined are kept.
    #[error("labels contain a single class, AUC undefined (precision {precision:?}, recall {recall:?}, f1 {f1:?})")]
    SingleClass {
        precision: Option<f64>,
        recall: Option<f64>,
        f1: Option<f64>,
    },
    #[error("need at least three conversations to split, got {0}")]
    TooFewConversations(usize),
    #[error("invalid split: {0}")]
    SplitConfig(String),
    #[error("repetitions must be at least 1")]
    Repetitions,
    #[error("feature schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub metrics: MetricsReport,
    /// `(in_domain - transfer) / in_domain * 100`, when an in-domain report is given.
    pub f1_degradation_pct: Option<f64>,
    pub auc_degradation_pct: Option<f64>,
}

/// Apply a classifier trained on one corpus to another corpus's features.
pub fn transfer_eval(
    model: &BranchClassifier,
    target: &FeatureMatrix,
    in_domain: Option<&MetricsReport>,
    threshold: f64,
) -> Result<TransferReport, EvalError> {
    if model.feature_names.len() != FEATURE_NAMES.len()
        || model.feature_names.iter().zip(FEATURE_NAMES).any(|(a, b)| a != b)
    {
        return Err(EvalError::Schema(format!(
            "model columns {:?} differ from feature columns",
            model.feature_names
        )));
    }
    let scores = model.predict_matrix(target)?;
    let metrics = compute_metrics(&scores, &target.labels(), threshold)?;
    let degrade = |base: f64, now: f64| (base > 0.0).then(|| (base - now) / base * 100.0);
    Ok(TransferReport {
        f1_degradation_pct: in_domain.and_then(|b| degrade(b.f1, metrics.f1)),
        auc_degradation_pct: in_domain.and_then(|b| degrade(b.auc, metrics.auc)),
        metrics,
    })
}
