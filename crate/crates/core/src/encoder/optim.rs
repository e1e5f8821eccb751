//! Adaptive-moment optimizer with decoupled weight decay, plateau-halving
//! learning-rate schedule, and the training configuration shared by the
//! gradient-trained backends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Decoupled decay coefficient; 0 gives plain Adam.
    pub weight_decay: f64,
    /// Epochs without a validation improvement of at least 1e-6 before the
    /// learning rate is halved.
    pub patience: usize,
    /// Share of samples held out for the plateau check. Zero reuses the
    /// training set.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn autoencoder() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            learning_rate: 3e-4,
            weight_decay: 0.01,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }

    pub fn triplet() -> Self {
        Self {
            epochs: 200,
            batch_size: 512,
            learning_rate: 1e-3,
            weight_decay: 0.0,
            patience: 10,
            validation_fraction: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidArgument("weight decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument("validation fraction outside [0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub learning_rate: Vec<f64>,
}

impl TrainHistory {
    pub fn push(&mut self, epoch: usize, train: f64, val: f64, lr: f64) -> Result<()> {
        if !train.is_finite() || !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        self.train_loss.push(train);
        self.val_loss.push(val);
        self.learning_rate.push(lr);
        Ok(())
    }
}

pub struct AdamW {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(shapes: &[usize], lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * wd * p[i];
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Halves the learning rate once the monitored loss stops improving.
#[derive(Debug, Clone)]
pub struct PlateauHalver {
    patience: usize,
    threshold: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauHalver {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            threshold: 1e-6,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Returns the factor to apply to the learning rate (1.0 or 0.5).
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss <= self.best - self.threshold {
            self.best = loss;
            self.bad_epochs = 0;
            return 1.0;
        }
        self.bad_epochs += 1;
        if self.patience > 0 && self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            0.5
        } else {
            1.0
        }
    }
}

/// Splits `0..n` into (train, validation) index sets with a seeded shuffle.
pub(crate) fn split_indices(n: usize, fraction: f64, rng: &mut impl rand::Rng) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = (n as f64 * fraction).floor() as usize;
    if n_val == 0 || n_val >= n {
        return (idx.clone(), idx);
    }
    idx.shuffle(rng);
    let val = idx.split_off(n - n_val);
    (idx, val)
}
