//! The branching classifier: a from-scratch two-layer network trained with
//! Adam, feature standardization, checkpoints and the random baseline.

mod checkpoint;
mod mlp;
mod train;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureMask, FeatureMatrix, FEATURE_DIM, FEATURE_NAMES};

pub use checkpoint::Checkpoint;
pub use mlp::{check_gradients, init_mlp, MlpModel};
pub use train::{train, TrainConfig, TrainHistory};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("input has {found} columns, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("input column {0} is not finite")]
    NonFiniteInput(usize),
    #[error("training and validation splits must be non-empty")]
    EmptySplit,
    #[error("feature and label counts differ")]
    LabelCount,
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("training diverged (non-finite loss) in epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Per-column affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, 1 for constant columns.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

/// Hyperparameters of the classifier itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub mask: FeatureMask,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 100,
            dropout_rate: 0.2,
            mask: FeatureMask::Full,
        }
    }
}

/// Standardize, apply the column mask, then run the network.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchClassifier {
    pub feature_names: Vec<String>,
    pub mask: FeatureMask,
    pub scaler: Standardizer,
    pub mlp: MlpModel,
    pub train_config: TrainConfig,
}

impl BranchClassifier {
    /// Fit the scaler on `train_set` and train a freshly initialized network.
    pub fn fit(
        train_set: &FeatureMatrix,
        val_set: &FeatureMatrix,
        config: &ClassifierConfig,
        train_config: &TrainConfig,
        seed: u64,
    ) -> Result<(Self, TrainHistory), ModelError> {
        let scaler = Standardizer::fit(&train_set.rows);
        let mut clf = Self {
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
            mask: config.mask,
            scaler,
            mlp: init_mlp(config.hidden_dim, config.dropout_rate, seed)?,
            train_config: train_config.clone(),
        };
        let tx: Vec<Vec<f64>> = train_set.rows.iter().map(|r| clf.prepare(r)).collect();
        let vx: Vec<Vec<f64>> = val_set.rows.iter().map(|r| clf.prepare(r)).collect();
        let (mlp, history) = train(
            clf.mlp.clone(),
            &tx,
            &train_set.labels(),
            &vx,
            &val_set.labels(),
            train_config,
        )?;
        clf.mlp = mlp;
        Ok((clf, history))
    }

    /// Standardized and masked input row.
    pub fn prepare(&self, row: &[f64]) -> Vec<f64> {
        let mut x = self.scaler.transform(row);
        for (i, v) in x.iter_mut().enumerate() {
            if !self.mask.keeps(i) {
                *v = 0.0;
            }
        }
        x
    }

    pub fn predict(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != FEATURE_DIM {
            return Err(ModelError::Dimension {
                expected: FEATURE_DIM,
                found: row.len(),
            });
        }
        self.mlp.predict(&self.prepare(row))
    }

    pub fn predict_matrix(&self, m: &FeatureMatrix) -> Result<Vec<f64>, ModelError> {
        m.rows.iter().map(|r| self.predict(r)).collect()
    }
}

/// Uniform `[0, 1)` scores, one per instance.
pub fn random_baseline(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen::<f64>()).collect()
}
