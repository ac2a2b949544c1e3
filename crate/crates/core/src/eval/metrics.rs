use serde::{Deserialize, Serialize};

use super::EvalError;

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(EvalError::Empty);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(EvalError::NonBinaryLabel(bad));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NanScore);
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Area under the ROC curve via the rank statistic; tied scores count half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass {
            precision: None,
            recall: None,
            f1: None,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let tied_pos = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += midrank * tied_pos as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// One operating point of the ROC curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from the strictest threshold down, starting at (0, 0).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass {
            precision: None,
            recall: None,
            f1: None,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (idx, &k) in order.iter().enumerate() {
        if labels[k] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_tie = order.get(idx + 1).is_none_or(|&n| scores[n] != scores[k]);
        if last_of_tie {
            points.push(RocPoint {
                threshold: scores[k],
                fpr: fp as f64 / neg as f64,
                tpr: tp as f64 / pos as f64,
            });
        }
    }
    Ok(points)
}

/// Positive-class (branching) metrics at a decision threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub auc: f64,
    pub threshold: f64,
    pub positives: usize,
    pub negatives: usize,
}

impl MetricsReport {
    /// One header row and one value row, columns F1, P, R, AUC.
    pub fn render_table(&self, label: &str) -> String {
        let w = label.len().max(8);
        format!(
            "{:<w$}  {:>6}  {:>6}  {:>6}  {:>6}\n{:<w$}  {:>6.3}  {:>6.3}  {:>6.3}  {:>6.3}\n",
            "", "F1", "P", "R", "AUC", label, self.f1, self.precision, self.recall, self.auc
        )
    }
}

/// Precision, recall and F1 at `threshold`; each is 0 when its denominator is.
fn prf(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64, f64) {
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Scores at or above `threshold` predict branching.
pub fn compute_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let (precision, recall, f1) = prf(scores, labels, threshold);
    if pos == 0 || neg == 0 {
        let defined = |v: f64, ok: bool| ok.then_some(v);
        return Err(EvalError::SingleClass {
            precision: defined(precision, scores.iter().any(|&s| s >= threshold)),
            recall: defined(recall, pos > 0),
            f1: defined(f1, pos > 0),
        });
    }
    Ok(MetricsReport {
        f1,
        precision,
        recall,
        auc: roc_auc(scores, labels)?,
        threshold,
        positives: pos,
        negatives: neg,
    })
}
