//! Affine autoencoder trained on pixel-wise squared reconstruction error.
//!
//! Encoder `E(x) = W_e x + b_e`, decoder `D(z) = act(W_d z + b_d)` where the
//! activation is the identity for grayscale input and the logistic function
//! for binary edge maps.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::optim::{split_indices, AdamW, PlateauHalver, TrainConfig, TrainHistory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub width: usize,
    pub height: usize,
    /// d × n
    pub encode_weights: Array2<f64>,
    pub encode_bias: Array1<f64>,
    /// n × d
    pub decode_weights: Array2<f64>,
    pub decode_bias: Array1<f64>,
    pub output: OutputActivation,
}

/// Gradients with the same layout as the model parameters.
#[derive(Debug, Clone)]
pub struct AutoencoderGrads {
    pub encode_weights: Array2<f64>,
    pub encode_bias: Array1<f64>,
    pub decode_weights: Array2<f64>,
    pub decode_bias: Array1<f64>,
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl AutoencoderModel {
    pub fn zeros(width: usize, height: usize, dim: usize, output: OutputActivation) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            encode_weights: Array2::zeros((dim, n)),
            encode_bias: Array1::zeros(dim),
            decode_weights: Array2::zeros((n, dim)),
            decode_bias: Array1::zeros(n),
            output,
        }
    }

    /// Gaussian initialization with variance 1/fan-in.
    pub fn random(width: usize, height: usize, dim: usize, output: OutputActivation, rng: &mut ChaCha8Rng) -> Self {
        let mut m = Self::zeros(width, height, dim, output);
        let n = width * height;
        let enc = Normal::new(0.0, 1.0 / (n as f64).sqrt()).expect("finite std");
        let dec = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite std");
        m.encode_weights.iter_mut().for_each(|w| *w = enc.sample(rng));
        m.decode_weights.iter_mut().for_each(|w| *w = dec.sample(rng));
        m
    }

    pub fn input_len(&self) -> usize {
        self.encode_weights.ncols()
    }

    pub fn dim(&self) -> usize {
        self.encode_weights.nrows()
    }

    pub fn param_count(&self) -> usize {
        2 * self.dim() * self.input_len() + self.dim() + self.input_len()
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.nrows() == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if batch.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: batch.ncols(),
            });
        }
        Ok(())
    }

    /// Codes `E(x)` for each row of `batch`.
    pub fn encode(&self, batch: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = batch.dot(&self.encode_weights.t());
        z += &self.encode_bias;
        z
    }

    pub fn decode(&self, codes: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = codes.dot(&self.decode_weights.t());
        y += &self.decode_bias;
        if self.output == OutputActivation::Logistic {
            y.mapv_inplace(logistic);
        }
        y
    }

    pub fn encode_one(&self, x: &[f64]) -> Result<Array1<f64>> {
        if x.len() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: x.len(),
            });
        }
        let x = ndarray::ArrayView1::from(x);
        Ok(self.encode_weights.dot(&x) + &self.encode_bias)
    }

    /// Mean over the batch of `‖x − D(E(x))‖²`.
    pub fn loss(&self, batch: &ArrayView2<f64>) -> Result<f64> {
        self.check_batch(batch)?;
        let y = self.decode(&self.encode(batch).view());
        let se: f64 = (&y - batch).iter().map(|r| r * r).sum();
        Ok(se / batch.nrows() as f64)
    }

    pub fn loss_and_grad(&self, batch: &ArrayView2<f64>) -> Result<(f64, AutoencoderGrads)> {
        self.check_batch(batch)?;
        let b = batch.nrows() as f64;
        let z = self.encode(batch);
        let y = self.decode(&z.view());
        let resid = &y - batch;
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / b;
        let mut dy = resid * (2.0 / b);
        if self.output == OutputActivation::Logistic {
            dy.zip_mut_with(&y, |g, &s| *g *= s * (1.0 - s));
        }
        let d_dec_w = dy.t().dot(&z);
        let d_dec_b = dy.sum_axis(Axis(0));
        let dz = dy.dot(&self.decode_weights);
        let d_enc_w = dz.t().dot(batch);
        let d_enc_b = dz.sum_axis(Axis(0));
        Ok((
            loss,
            AutoencoderGrads {
                encode_weights: d_enc_w,
                encode_bias: d_enc_b,
                decode_weights: d_dec_w,
                decode_bias: d_dec_b,
            },
        ))
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.encode_weights.as_slice_mut().expect("standard layout"),
            self.encode_bias.as_slice_mut().expect("standard layout"),
            self.decode_weights.as_slice_mut().expect("standard layout"),
            self.decode_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.encode_weights.iter().all(|v| v.is_finite())
            && self.encode_bias.iter().all(|v| v.is_finite())
            && self.decode_weights.iter().all(|v| v.is_finite())
            && self.decode_bias.iter().all(|v| v.is_finite())
    }
}

impl AutoencoderGrads {
    fn slices(&self) -> [&[f64]; 4] {
        [
            self.encode_weights.as_slice().expect("standard layout"),
            self.encode_bias.as_slice().expect("standard layout"),
            self.decode_weights.as_slice().expect("standard layout"),
            self.decode_bias.as_slice().expect("standard layout"),
        ]
    }
}

pub(crate) fn gather_rows(data: &ArrayView2<f64>, rows: &[usize]) -> Array2<f64> {
    data.select(Axis(0), rows)
}

/// Trains an autoencoder on the rows of `data` (each a flattened
/// `width × height` view scaled to `[0, 1]`).
pub fn train_autoencoder(
    data: &ArrayView2<f64>,
    width: usize,
    height: usize,
    dim: usize,
    output: OutputActivation,
    cfg: &TrainConfig,
) -> Result<(AutoencoderModel, TrainHistory)> {
    cfg.validate()?;
    if data.nrows() == 0 {
        return Err(Error::InvalidArgument("no training data".into()));
    }
    if data.ncols() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            got: data.ncols(),
        });
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = AutoencoderModel::random(width, height, dim, output, &mut rng);
    let (mut train_idx, val_idx) = split_indices(data.nrows(), cfg.validation_fraction, &mut rng);

    // start the decoder at the mean image so early steps fit structure, not brightness
    let mean = gather_rows(data, &train_idx).mean_axis(Axis(0)).expect("non-empty");
    model.decode_bias = match output {
        OutputActivation::Linear => mean,
        OutputActivation::Logistic => mean.mapv(|m| {
            let m = m.clamp(1e-3, 1.0 - 1e-3);
            (m / (1.0 - m)).ln()
        }),
    };

    let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::new(&shapes, cfg.learning_rate, cfg.weight_decay);
    let mut plateau = PlateauHalver::new(cfg.patience);
    let val_data = gather_rows(data, &val_idx);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch = gather_rows(data, chunk);
            let (loss, grads) = model.loss_and_grad(&batch.view())?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            opt.step(&mut model.params_mut(), &grads.slices());
        }
        let train_loss = total / train_idx.len() as f64;
        let val_loss = model.loss(&val_data.view())?;
        history.push(epoch, train_loss, val_loss, opt.lr())?;
        let factor = plateau.observe(val_loss);
        opt.set_lr(opt.lr() * factor);
    }
    if !model.is_finite() {
        return Err(Error::TrainingDiverged { epoch: cfg.epochs });
    }
    model.round_to_f32();
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn zero_model_on_zero_input_has_zero_loss() {
        let m = AutoencoderModel::zeros(4, 4, 3, OutputActivation::Linear);
        let x = Array2::zeros((5, 16));
        assert_eq!(m.loss(&x.view()).unwrap(), 0.0);
    }

    #[test]
    fn identity_model_reconstructs_perfectly() {
        let n = 9;
        let mut m = AutoencoderModel::zeros(3, 3, n, OutputActivation::Linear);
        m.encode_weights = Array2::eye(n);
        m.decode_weights = Array2::eye(n);
        let x = Array2::from_shape_fn((4, n), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        assert_eq!(m.loss(&x.view()).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let m = AutoencoderModel::zeros(4, 4, 3, OutputActivation::Linear);
        let x = Array2::zeros((2, 15));
        assert!(matches!(m.loss(&x.view()), Err(Error::DimensionMismatch { .. })));
        assert!(m.encode_one(&[0.0; 3]).is_err());
    }

    #[test]
    fn logistic_is_stable() {
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(logistic(1000.0), 1.0);
        assert!((logistic(0.0) - 0.5).abs() < 1e-15);
    }
}
