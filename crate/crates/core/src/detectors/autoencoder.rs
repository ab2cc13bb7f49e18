//! Single-hidden-layer autoencoder (d -> h -> d, tanh hidden, linear output)
//! trained on mean squared reconstruction error with mini-batch Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_uniform_dim, DetectorError};
use crate::embedding::EmbeddingVector;
use crate::optim::{Adam, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    /// h x d, row-major.
    pub encoder_weights: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    /// d x h, row-major.
    pub decoder_weights: Vec<f64>,
    pub decoder_bias: Vec<f64>,
}

/// Default hidden width: max(8, d / 8).
pub fn default_hidden_dim(d: usize) -> usize {
    (d / 8).max(8)
}

/// Gradient buffers, same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AeGradients {
    pub encoder_weights: Vec<f64>,
    pub encoder_bias: Vec<f64>,
    pub decoder_weights: Vec<f64>,
    pub decoder_bias: Vec<f64>,
}

impl AeGradients {
    fn zeros(m: &AutoencoderModel) -> Self {
        Self {
            encoder_weights: vec![0.0; m.encoder_weights.len()],
            encoder_bias: vec![0.0; m.encoder_bias.len()],
            decoder_weights: vec![0.0; m.decoder_weights.len()],
            decoder_bias: vec![0.0; m.decoder_bias.len()],
        }
    }
}

impl AutoencoderModel {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let mut draw = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.random_range(-limit..limit)).collect() };
        let encoder_weights = draw(hidden_dim * input_dim);
        let decoder_weights = draw(input_dim * hidden_dim);
        Self {
            input_dim,
            hidden_dim,
            activation: Activation::Tanh,
            encoder_weights,
            encoder_bias: vec![0.0; hidden_dim],
            decoder_weights,
            decoder_bias: vec![0.0; input_dim],
        }
    }

    pub fn encode(&self, x: &[f64]) -> Vec<f64> {
        let d = self.input_dim;
        (0..self.hidden_dim)
            .map(|j| {
                let row = &self.encoder_weights[j * d..(j + 1) * d];
                let a: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.encoder_bias[j];
                a.tanh()
            })
            .collect()
    }

    pub fn decode(&self, hidden: &[f64]) -> Vec<f64> {
        let h = self.hidden_dim;
        (0..self.input_dim)
            .map(|i| {
                let row = &self.decoder_weights[i * h..(i + 1) * h];
                row.iter().zip(hidden).map(|(w, v)| w * v).sum::<f64>() + self.decoder_bias[i]
            })
            .collect()
    }

    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        self.decode(&self.encode(x))
    }

    fn is_finite(&self) -> bool {
        [&self.encoder_weights, &self.encoder_bias, &self.decoder_weights, &self.decoder_bias]
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Mean (over the batch) of per-sample mean squared error, and its gradient.
    pub fn loss_and_gradients(&self, batch: &[&[f64]]) -> (f64, AeGradients) {
        let d = self.input_dim;
        let h = self.hidden_dim;
        let mut g = AeGradients::zeros(self);
        let scale = 1.0 / (batch.len() as f64 * d as f64);
        let mut loss = 0.0;
        for x in batch {
            let hidden = self.encode(x);
            let y = self.decode(&hidden);
            let dy: Vec<f64> = y.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
            loss += dy.iter().map(|e| e * e).sum::<f64>() * scale;
            let dy: Vec<f64> = dy.iter().map(|e| 2.0 * e * scale).collect();

            let mut dh = vec![0.0; h];
            for i in 0..d {
                let row = &self.decoder_weights[i * h..(i + 1) * h];
                let grow = &mut g.decoder_weights[i * h..(i + 1) * h];
                for j in 0..h {
                    grow[j] += dy[i] * hidden[j];
                    dh[j] += row[j] * dy[i];
                }
                g.decoder_bias[i] += dy[i];
            }
            for j in 0..h {
                let da = dh[j] * (1.0 - hidden[j] * hidden[j]);
                let grow = &mut g.encoder_weights[j * d..(j + 1) * d];
                for (gw, xv) in grow.iter_mut().zip(x.iter()) {
                    *gw += da * xv;
                }
                g.encoder_bias[j] += da;
            }
        }
        (loss, g)
    }

    pub fn mean_loss(&self, rows: &[&[f64]]) -> f64 {
        rows.iter().map(|x| ae_score_slice(self, x)).sum::<f64>() / rows.len() as f64
    }
}

pub fn ae_fit(x: &[EmbeddingVector], cfg: &TrainConfig) -> Result<AutoencoderModel, DetectorError> {
    ae_fit_with_history(x, cfg, None).map(|(m, _)| m)
}

/// Trains the autoencoder and returns the full-data loss after each epoch.
/// `hidden_dim` defaults to [`default_hidden_dim`].
pub fn ae_fit_with_history(
    x: &[EmbeddingVector],
    cfg: &TrainConfig,
    hidden_dim: Option<usize>,
) -> Result<(AutoencoderModel, Vec<f64>), DetectorError> {
    if !cfg.is_valid() {
        return Err(DetectorError::InvalidParameter(format!("bad train config {cfg:?}")));
    }
    if x.len() < cfg.batch_size {
        return Err(DetectorError::InsufficientData {
            needed: cfg.batch_size,
            got: x.len(),
        });
    }
    let rows: Vec<&[f64]> = x.iter().map(|v| v.values.as_slice()).collect();
    let d = check_uniform_dim(&rows)?;
    let h = hidden_dim.unwrap_or_else(|| default_hidden_dim(d));

    let mut model = AutoencoderModel::init(d, h, cfg.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = [
        Adam::new(model.encoder_weights.len(), cfg.learning_rate),
        Adam::new(model.encoder_bias.len(), cfg.learning_rate),
        Adam::new(model.decoder_weights.len(), cfg.learning_rate),
        Adam::new(model.decoder_bias.len(), cfg.learning_rate),
    ];
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[f64]> = idx.iter().map(|&i| rows[i]).collect();
            let (loss, g) = model.loss_and_gradients(&batch);
            if !loss.is_finite() {
                return Err(DetectorError::NonFiniteLoss { epoch, batch: b });
            }
            opt[0].step(&mut model.encoder_weights, &g.encoder_weights);
            opt[1].step(&mut model.encoder_bias, &g.encoder_bias);
            opt[2].step(&mut model.decoder_weights, &g.decoder_weights);
            opt[3].step(&mut model.decoder_bias, &g.decoder_bias);
            if !model.is_finite() {
                return Err(DetectorError::NonFiniteLoss { epoch, batch: b });
            }
        }
        let epoch_loss = model.mean_loss(&rows);
        log::debug!("autoencoder epoch {epoch}: loss {epoch_loss:.6e}");
        history.push(epoch_loss);
    }
    Ok((model, history))
}

/// Mean squared error between `x` and its reconstruction.
pub fn ae_score(m: &AutoencoderModel, x: &EmbeddingVector) -> f64 {
    ae_score_slice(m, &x.values)
}

pub fn ae_score_slice(m: &AutoencoderModel, x: &[f64]) -> f64 {
    let y = m.reconstruct(x);
    y.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64
}
