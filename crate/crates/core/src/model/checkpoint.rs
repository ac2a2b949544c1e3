//! JSON checkpoints with weights as base64 little-endian f64 arrays.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{BranchClassifier, MlpModel, ModelError, Standardizer, TrainConfig};
use crate::features::FeatureMask;

const FORMAT: &str = "branchpred-classifier";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    pub mask: FeatureMask,
    pub feature_names: Vec<String>,
    pub train_config: TrainConfig,
    pub scaler_mean: String,
    pub scaler_scale: String,
    pub w1: String,
    pub b1: String,
    pub w2: String,
    pub b2: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(field: &str, text: &str, len: usize) -> Result<Vec<f64>, ModelError> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| ModelError::Checkpoint(format!("{field}: {e}")))?;
    if bytes.len() != len * 8 {
        return Err(ModelError::Checkpoint(format!(
            "{field}: expected {len} values, found {} bytes",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

impl From<&BranchClassifier> for Checkpoint {
    fn from(c: &BranchClassifier) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            input_dim: c.mlp.input_dim,
            hidden_dim: c.mlp.hidden_dim,
            dropout_rate: c.mlp.dropout_rate,
            seed: c.mlp.seed,
            mask: c.mask,
            feature_names: c.feature_names.clone(),
            train_config: c.train_config.clone(),
            scaler_mean: encode(&c.scaler.mean),
            scaler_scale: encode(&c.scaler.scale),
            w1: encode(c.mlp.w1()),
            b1: encode(c.mlp.b1()),
            w2: encode(c.mlp.w2()),
            b2: encode(&[c.mlp.b2()]),
        }
    }
}

impl TryFrom<Checkpoint> for BranchClassifier {
    type Error = ModelError;

    fn try_from(ck: Checkpoint) -> Result<Self, ModelError> {
        if ck.format != FORMAT || ck.version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        if ck.feature_names.len() != ck.input_dim {
            return Err(ModelError::Checkpoint("feature names do not match input width".into()));
        }
        let (d, h) = (ck.input_dim, ck.hidden_dim);
        let mut params = decode("w1", &ck.w1, d * h)?;
        params.extend(decode("b1", &ck.b1, h)?);
        params.extend(decode("w2", &ck.w2, h)?);
        params.extend(decode("b2", &ck.b2, 1)?);
        Ok(BranchClassifier {
            feature_names: ck.feature_names,
            mask: ck.mask,
            scaler: Standardizer {
                mean: decode("scaler_mean", &ck.scaler_mean, d)?,
                scale: decode("scaler_scale", &ck.scaler_scale, d)?,
            },
            mlp: MlpModel {
                input_dim: d,
                hidden_dim: h,
                dropout_rate: ck.dropout_rate,
                seed: ck.seed,
                params,
            },
            train_config: ck.train_config,
        })
    }
}

impl BranchClassifier {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&Checkpoint::from(self)).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        ck.try_into()
    }
}
