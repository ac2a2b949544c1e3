use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::ModelError;
use crate::eval::roc_auc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-5,
            batch_size: 120,
            max_epochs: 5,
            patience: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.patience > 0
            && self.patience <= self.max_epochs
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(ModelError::Config(format!("invalid training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean loss over the training set after each epoch, dropout off.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// `None` when the validation split holds a single class.
    pub val_auc: Vec<Option<f64>>,
    pub stopped_epoch: usize,
    /// Epoch (1-based) whose weights were kept.
    pub best_epoch: usize,
}

fn mean_loss<R: AsRef<[f64]>>(model: &MlpModel, xs: &[R], ys: &[u8]) -> f64 {
    let total: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, &y)| model.loss(x.as_ref(), f64::from(y), None))
        .sum();
    total / xs.len() as f64
}

/// Minibatch Adam on binary cross-entropy with early stopping on the
/// validation loss. Returns the weights of the best validation epoch.
///
/// Shuffling and dropout draw from a generator seeded with the model seed.
pub fn train<R: AsRef<[f64]>>(
    mut model: MlpModel,
    train_x: &[R],
    train_y: &[u8],
    val_x: &[R],
    val_y: &[u8],
    config: &TrainConfig,
) -> Result<(MlpModel, TrainHistory), ModelError> {
    config.validate()?;
    if train_x.is_empty() || val_x.is_empty() {
        return Err(ModelError::EmptySplit);
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(ModelError::LabelCount);
    }
    let positives = train_y.iter().filter(|&&y| y == 1).count();
    if positives == 0 || positives == train_y.len() {
        return Err(ModelError::SingleClass);
    }
    for x in train_x.iter().chain(val_x) {
        model.check_input(x.as_ref())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let n_params = model.params.len();
    let mut m = vec![0.0; n_params];
    let mut v = vec![0.0; n_params];
    let mut grad = vec![0.0; n_params];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    let mut history = TrainHistory {
        train_loss: Vec::new(),
        val_loss: Vec::new(),
        val_auc: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
    };
    let mut best = (f64::INFINITY, model.params.clone());
    let mut waited = 0;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                let mask = (model.dropout_rate > 0.0).then(|| model.sample_mask(&mut rng));
                batch_loss +=
                    model.accumulate_gradient(train_x[i].as_ref(), f64::from(train_y[i]), mask.as_deref(), &mut grad);
            }
            if !batch_loss.is_finite() {
                return Err(ModelError::Diverged { epoch, batch: b });
            }
            let scale = 1.0 / batch.len() as f64;
            step += 1;
            let c1 = 1.0 - config.beta1.powi(step);
            let c2 = 1.0 - config.beta2.powi(step);
            for k in 0..n_params {
                let g = grad[k] * scale;
                m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
                v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
                model.params[k] -= config.learning_rate * (m[k] / c1) / ((v[k] / c2).sqrt() + config.epsilon);
            }
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Diverged { epoch, batch: 0 });
        }

        let train_loss = mean_loss(&model, train_x, train_y);
        let val_loss = mean_loss(&model, val_x, val_y);
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(ModelError::Diverged { epoch, batch: 0 });
        }
        let val_scores: Vec<f64> = val_x
            .iter()
            .map(|x| model.predict(x.as_ref()).expect("checked input"))
            .collect();
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        history.val_auc.push(roc_auc(&val_scores, val_y).ok());
        history.stopped_epoch = epoch;

        if val_loss < best.0 {
            best = (val_loss, model.params.clone());
            history.best_epoch = epoch;
            waited = 0;
        } else {
            waited += 1;
            if waited >= config.patience {
                break;
            }
        }
    }
    model.params = best.1;
    Ok((model, history))
}
