use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ModelError;
use crate::features::FEATURE_DIM;

/// Dense -> ReLU -> dropout -> dense -> sigmoid.
///
/// Parameters live in one flat vector laid out as `w1` (hidden x input,
/// row-major), `b1`, `w2`, `b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) input_dim: usize,
    pub(crate) hidden_dim: usize,
    pub(crate) dropout_rate: f64,
    pub(crate) seed: u64,
    pub(crate) params: Vec<f64>,
}

/// Per-example activations kept for the backward pass.
struct Activations {
    pre: Vec<f64>,
    hidden: Vec<f64>,
    logit: f64,
}

impl MlpModel {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, dropout_rate: f64, seed: u64) -> Result<Self, ModelError> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(ModelError::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(ModelError::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; Self::param_count(input_dim, hidden_dim)];
        let a1 = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let a2 = (6.0 / (hidden_dim + 1) as f64).sqrt();
        let n_w1 = input_dim * hidden_dim;
        for w in &mut params[..n_w1] {
            *w = rng.gen_range(-a1..a1);
        }
        for w in &mut params[n_w1 + hidden_dim..n_w1 + 2 * hidden_dim] {
            *w = rng.gen_range(-a2..a2);
        }
        Ok(Self {
            input_dim,
            hidden_dim,
            dropout_rate,
            seed,
            params,
        })
    }

    /// A model whose every parameter is zero.
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            dropout_rate: 0.0,
            seed: 0,
            params: vec![0.0; Self::param_count(input_dim, hidden_dim)],
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        input_dim * hidden_dim + 2 * hidden_dim + 1
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn w1(&self) -> &[f64] {
        &self.params[..self.input_dim * self.hidden_dim]
    }

    pub fn b1(&self) -> &[f64] {
        let s = self.input_dim * self.hidden_dim;
        &self.params[s..s + self.hidden_dim]
    }

    pub fn w2(&self) -> &[f64] {
        let s = self.input_dim * self.hidden_dim + self.hidden_dim;
        &self.params[s..s + self.hidden_dim]
    }

    pub fn b2(&self) -> f64 {
        self.params[self.params.len() - 1]
    }

    /// Zero the incoming weights of one input column.
    pub fn zero_input(&mut self, column: usize) {
        let d = self.input_dim;
        for j in 0..self.hidden_dim {
            self.params[j * d + column] = 0.0;
        }
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.input_dim {
            return Err(ModelError::Dimension {
                expected: self.input_dim,
                found: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFiniteInput(i));
        }
        Ok(())
    }

    fn activations(&self, x: &[f64], mask: Option<&[f64]>) -> Activations {
        let (w1, b1, w2) = (self.w1(), self.b1(), self.w2());
        let mut pre = Vec::with_capacity(self.hidden_dim);
        let mut hidden = Vec::with_capacity(self.hidden_dim);
        let mut logit = self.b2();
        for j in 0..self.hidden_dim {
            let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
            let z = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            let h = z.max(0.0) * mask.map_or(1.0, |m| m[j]);
            logit += w2[j] * h;
            pre.push(z);
            hidden.push(h);
        }
        Activations { pre, hidden, logit }
    }

    /// Inverted-dropout mask: kept units are scaled by `1 / (1 - p)`.
    pub(crate) fn sample_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let keep = 1.0 - self.dropout_rate;
        (0..self.hidden_dim)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect()
    }

    /// Branching probability. Dropout is applied only when `train_mode` is set.
    pub fn forward<R: Rng>(&self, x: &[f64], train_mode: bool, rng: &mut R) -> Result<f64, ModelError> {
        self.check_input(x)?;
        let mask = (train_mode && self.dropout_rate > 0.0).then(|| self.sample_mask(rng));
        Ok(sigmoid(self.activations(x, mask.as_deref()).logit))
    }

    /// Inference-mode probability.
    pub fn predict(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_input(x)?;
        Ok(sigmoid(self.activations(x, None).logit))
    }

    /// Binary cross-entropy of one example.
    pub fn loss(&self, x: &[f64], y: f64, mask: Option<&[f64]>) -> f64 {
        bce_with_logit(self.activations(x, mask).logit, y)
    }

    /// Loss and its gradient for one example, accumulated into `grad`.
    pub(crate) fn accumulate_gradient(&self, x: &[f64], y: f64, mask: Option<&[f64]>, grad: &mut [f64]) -> f64 {
        let act = self.activations(x, mask);
        let d = self.input_dim;
        let h = self.hidden_dim;
        let dlogit = sigmoid(act.logit) - y;
        let w2 = self.w2();
        let (g_w1, rest) = grad.split_at_mut(d * h);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(h);
        g_b2[0] += dlogit;
        for j in 0..h {
            g_w2[j] += dlogit * act.hidden[j];
            if act.pre[j] > 0.0 {
                let dz = dlogit * w2[j] * mask.map_or(1.0, |m| m[j]);
                g_b1[j] += dz;
                for (g, v) in g_w1[j * d..(j + 1) * d].iter_mut().zip(x) {
                    *g += dz * v;
                }
            }
        }
        bce_with_logit(act.logit, y)
    }

    /// Analytic gradient of the dropout-free loss.
    pub fn gradient(&self, x: &[f64], y: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_gradient(x, y, None, &mut g);
        g
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    crate::scorer::lexical::sigmoid(z)
}

/// `-[y ln p + (1 - y) ln(1 - p)]` with `p = sigmoid(z)`, computed stably.
pub(crate) fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Default-width network over the 32 feature columns.
pub fn init_mlp(hidden_dim: usize, dropout_rate: f64, seed: u64) -> Result<MlpModel, ModelError> {
    MlpModel::new(FEATURE_DIM, hidden_dim, dropout_rate, seed)
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences (step 1e-5), with dropout disabled. Where both
/// magnitudes are below 1e-8 the absolute difference is used instead.
pub fn check_gradients(model: &MlpModel, x: &[f64], y: f64) -> f64 {
    const STEP: f64 = 1e-5;
    let analytic = model.gradient(x, y);
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (i, a) in analytic.iter().enumerate() {
        let orig = probe.params[i];
        probe.params[i] = orig + STEP;
        let up = probe.loss(x, y, None);
        probe.params[i] = orig - STEP;
        let down = probe.loss(x, y, None);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-8 {
            (a - numeric).abs()
        } else {
            (a - numeric).abs() / scale
        };
        worst = worst.max(err);
    }
    worst
}
