//! Permutation feature importance measured as AUC drop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{roc_auc, EvalError};
use crate::stats::{mean, std_dev};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    /// Mean AUC drop over repetitions.
    pub importance: f64,
    pub std: f64,
    /// 1 = most important.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub baseline_auc: f64,
    pub repetitions: usize,
    /// In column order.
    pub features: Vec<FeatureImportance>,
}

impl ImportanceReport {
    /// Entries sorted by rank.
    pub fn ranked(&self) -> Vec<&FeatureImportance> {
        let mut v: Vec<_> = self.features.iter().collect();
        v.sort_by_key(|f| f.rank);
        v
    }

    pub fn render_table(&self) -> String {
        let width = self.features.iter().map(|f| f.name.len()).max().unwrap_or(4);
        let mut out = format!("{:>4}  {:<width$}  {:>9}  {:>8}\n", "rank", "feature", "AUC drop", "std");
        for f in self.ranked() {
            out.push_str(&format!(
                "{:>4}  {:<width$}  {:>9.4}  {:>8.4}\n",
                f.rank, f.name, f.importance, f.std
            ));
        }
        out
    }
}

/// Shuffle one column at a time and record how far the AUC falls.
///
/// Repetition `r` of column `j` uses the generator stream
/// `j * repetitions + r` of `seed`, so results do not depend on evaluation
/// order.
pub fn permutation_importance<R, F>(
    predict: F,
    rows: &[R],
    labels: &[u8],
    names: &[String],
    repetitions: usize,
    seed: u64,
) -> Result<ImportanceReport, EvalError>
where
    R: AsRef<[f64]>,
    F: Fn(&[f64]) -> f64,
{
    if repetitions == 0 {
        return Err(EvalError::Repetitions);
    }
    let dim = rows.first().map_or(0, |r| r.as_ref().len());
    if names.len() != dim {
        return Err(EvalError::Schema(format!("{} names for {dim} columns", names.len())));
    }
    let base_scores: Vec<f64> = rows.iter().map(|r| predict(r.as_ref())).collect();
    let baseline_auc = roc_auc(&base_scores, labels)?;

    let mut work: Vec<Vec<f64>> = rows.iter().map(|r| r.as_ref().to_vec()).collect();
    let mut drops = Vec::with_capacity(dim);
    for j in 0..dim {
        let original: Vec<f64> = work.iter().map(|r| r[j]).collect();
        let mut col_drops = Vec::with_capacity(repetitions);
        for rep in 0..repetitions {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((j * repetitions + rep) as u64);
            let mut shuffled = original.clone();
            shuffled.shuffle(&mut rng);
            for (row, v) in work.iter_mut().zip(&shuffled) {
                row[j] = *v;
            }
            let scores: Vec<f64> = work.iter().map(|r| predict(r)).collect();
            col_drops.push(baseline_auc - roc_auc(&scores, labels)?);
        }
        for (row, v) in work.iter_mut().zip(&original) {
            row[j] = *v;
        }
        drops.push(col_drops);
    }

    let mut features: Vec<FeatureImportance> = drops
        .iter()
        .zip(names)
        .map(|(d, name)| FeatureImportance {
            name: name.clone(),
            importance: mean(d),
            std: std_dev(d),
            rank: 0,
        })
        .collect();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| features[b].importance.total_cmp(&features[a].importance).then(a.cmp(&b)));
    for (rank, &i) in order.iter().enumerate() {
        features[i].rank = rank + 1;
    }
    Ok(ImportanceReport {
        baseline_auc,
        repetitions,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ignored_column_has_zero_importance() {
        let rows: Vec<[f64; 2]> = (0..50).map(|i| [i as f64, ((i * 7) % 11) as f64]).collect();
        let labels: Vec<u8> = (0..50).map(|i| u8::from(i >= 25)).collect();
        let names = vec!["signal".to_string(), "ignored".to_string()];
        let rep = permutation_importance(|r| r[0] / 50.0, &rows, &labels, &names, 3, 1).unwrap();
        assert_eq!(rep.baseline_auc, 1.0);
        assert_eq!(rep.features[1].importance, 0.0);
        assert_eq!(rep.features[0].rank, 1);
        assert!(rep.features[0].importance > 0.3);
    }

    #[test]
    fn zero_repetitions_rejected() {
        let rows = vec![[0.0], [1.0]];
        let r = permutation_importance(|r| r[0], &rows, &[0, 1], &["a".to_string()], 0, 0);
        assert!(matches!(r, Err(EvalError::Repetitions)));
    }
}
