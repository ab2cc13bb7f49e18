//! Adam optimizer over flat parameter buffers, plus the shared training config.

use serde::{Deserialize, Serialize};

/// Mini-batch training settings. The defaults are the transformer fine-tuning
/// values; the autoencoder and the linear role classifier override the
/// learning rate (see [`TrainConfig::autoencoder`] and
/// [`TrainConfig::classifier`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 6,
            batch_size: 16,
            learning_rate: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const AUTOENCODER_LEARNING_RATE: f64 = 1e-3;
    pub const CLASSIFIER_LEARNING_RATE: f64 = 1e-2;

    pub fn autoencoder(seed: u64) -> Self {
        Self {
            learning_rate: Self::AUTOENCODER_LEARNING_RATE,
            seed,
            ..Default::default()
        }
    }

    pub fn classifier(seed: u64) -> Self {
        Self {
            learning_rate: Self::CLASSIFIER_LEARNING_RATE,
            seed,
            ..Default::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.epochs > 0 && self.batch_size > 0 && self.learning_rate > 0.0 && self.learning_rate.is_finite()
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
