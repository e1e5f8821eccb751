//! Two-layer perceptron encoder trained with a margin triplet loss and
//! in-batch hard negative mining.
//!
//! Outputs are L2-normalized inside the forward pass so the margin is
//! measured on the unit sphere, the same space retrieval uses.

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::autoencoder::gather_rows;
use super::optim::{split_indices, AdamW, PlateauHalver, TrainConfig, TrainHistory};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// `max(0, ‖xa − xp‖² − ‖xa − xn‖² + alpha)`.
pub fn triplet_loss(xa: &[f64], xp: &[f64], xn: &[f64], alpha: f64) -> Result<f64> {
    if xp.len() != xa.len() || xn.len() != xa.len() {
        return Err(Error::DimensionMismatch {
            expected: xa.len(),
            got: if xp.len() != xa.len() { xp.len() } else { xn.len() },
        });
    }
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    Ok((sq(xa, xp) - sq(xa, xn) + alpha).max(0.0))
}

/// For every row, the index of the closest row carrying a different label.
/// Ties go to the lowest index.
pub fn hardest_negatives(embeddings: &ArrayView2<f64>, labels: &[usize]) -> Result<Vec<usize>> {
    assert_eq!(embeddings.nrows(), labels.len());
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::CannotMineNegatives);
    }
    let n = labels.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for j in 0..n {
            if labels[j] == labels[i] {
                continue;
            }
            let d: f64 = embeddings
                .row(i)
                .iter()
                .zip(embeddings.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best_d {
                best_d = d;
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletModel {
    pub width: usize,
    pub height: usize,
    /// h × n
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    /// d × h
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TripletGrads {
    pub hidden_weights: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

struct Forward {
    pre: Array2<f64>,
    hidden: Array2<f64>,
    norms: Array1<f64>,
    out: Array2<f64>,
}

impl TripletModel {
    pub fn random(width: usize, height: usize, hidden: usize, dim: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = width * height;
        let w1 = Normal::new(0.0, (2.0 / n as f64).sqrt()).expect("finite std");
        let w2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt()).expect("finite std");
        Self {
            width,
            height,
            hidden_weights: Array2::from_shape_simple_fn((hidden, n), || w1.sample(rng)),
            hidden_bias: Array1::zeros(hidden),
            output_weights: Array2::from_shape_simple_fn((dim, hidden), || w2.sample(rng)),
            output_bias: Array1::zeros(dim),
            alpha,
        }
    }

    pub fn input_len(&self) -> usize {
        self.hidden_weights.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_weights.nrows()
    }

    pub fn dim(&self) -> usize {
        self.output_weights.nrows()
    }

    fn check(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.input_len(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Forward {
        let mut pre = x.dot(&self.hidden_weights.t());
        pre += &self.hidden_bias;
        let hidden = pre.mapv(|a| if a > 0.0 { a } else { LEAKY_SLOPE * a });
        let mut raw = hidden.dot(&self.output_weights.t());
        raw += &self.output_bias;
        let norms = raw.map_axis(Axis(1), |r| r.dot(&r).sqrt().max(1e-12));
        let out = &raw / &norms.view().insert_axis(Axis(1));
        Forward {
            pre,
            hidden,
            norms,
            out,
        }
    }

    /// Unit-norm embeddings of each row.
    pub fn embed_batch(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(x)?;
        Ok(self.forward(x).out)
    }

    /// Mean triplet loss over rows: anchor `i`, positive `i`, and negative
    /// `anchors[negatives[i]]`.
    pub fn batch_loss(&self, anchors: &ArrayView2<f64>, positives: &ArrayView2<f64>, negatives: &[usize]) -> Result<f64> {
        Ok(self.batch_loss_and_grad(anchors, positives, negatives)?.0)
    }

    pub fn batch_loss_and_grad(
        &self,
        anchors: &ArrayView2<f64>,
        positives: &ArrayView2<f64>,
        negatives: &[usize],
    ) -> Result<(f64, TripletGrads)> {
        self.check(anchors)?;
        self.check(positives)?;
        let b = anchors.nrows();
        if positives.nrows() != b || negatives.len() != b || b == 0 {
            return Err(Error::InvalidArgument("anchor/positive/negative counts differ".into()));
        }
        let stacked = concatenate(Axis(0), &[anchors.view(), positives.view()]).expect("same width");
        let fwd = self.forward(&stacked.view());
        let (ya, yp) = fwd.out.view().split_at(Axis(0), b);
        let mut dy = Array2::<f64>::zeros(fwd.out.raw_dim());
        let mut loss = 0.0;
        let scale = 1.0 / b as f64;
        for i in 0..b {
            let a = ya.row(i);
            let p = yp.row(i);
            let nrow = ya.row(negatives[i]);
            let dap = &a - &p;
            let dan = &a - &nrow;
            let l = dap.dot(&dap) - dan.dot(&dan) + self.alpha;
            if l <= 0.0 {
                continue;
            }
            loss += l * scale;
            // ∂/∂a = 2(n − p), ∂/∂p = −2(a − p), ∂/∂n = 2(a − n)
            let ga = (&nrow - &p) * (2.0 * scale);
            let gp = &dap * (-2.0 * scale);
            let gn = &dan * (2.0 * scale);
            dy.row_mut(i).scaled_add(1.0, &ga);
            dy.row_mut(b + i).scaled_add(1.0, &gp);
            dy.row_mut(negatives[i]).scaled_add(1.0, &gn);
        }
        // through the normalization: d raw = (dy − y (y·dy)) / ‖raw‖
        let mut draw = dy;
        for ((mut g, y), &nrm) in draw.outer_iter_mut().zip(fwd.out.outer_iter()).zip(fwd.norms.iter()) {
            let proj = y.dot(&g);
            g.scaled_add(-proj, &y);
            g /= nrm;
        }
        let d_out_w = draw.t().dot(&fwd.hidden);
        let d_out_b = draw.sum_axis(Axis(0));
        let mut dpre = draw.dot(&self.output_weights);
        dpre.zip_mut_with(&fwd.pre, |g, &a| {
            if a <= 0.0 {
                *g *= LEAKY_SLOPE
            }
        });
        let d_hid_w = dpre.t().dot(&stacked);
        let d_hid_b = dpre.sum_axis(Axis(0));
        Ok((
            loss,
            TripletGrads {
                hidden_weights: d_hid_w,
                hidden_bias: d_hid_b,
                output_weights: d_out_w,
                output_bias: d_out_b,
            },
        ))
    }

    fn params_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.hidden_weights.as_slice_mut().expect("standard layout"),
            self.hidden_bias.as_slice_mut().expect("standard layout"),
            self.output_weights.as_slice_mut().expect("standard layout"),
            self.output_bias.as_slice_mut().expect("standard layout"),
        ]
    }

    pub(crate) fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self.alpha = self.alpha as f32 as f64;
    }

    pub fn is_finite(&self) -> bool {
        self.hidden_weights.iter().chain(self.hidden_bias.iter()).all(|v| v.is_finite())
            && self.output_weights.iter().chain(self.output_bias.iter()).all(|v| v.is_finite())
    }
}

impl TripletGrads {
    fn slices(&self) -> [&[f64]; 4] {
        [
            self.hidden_weights.as_slice().expect("standard layout"),
            self.hidden_bias.as_slice().expect("standard layout"),
            self.output_weights.as_slice().expect("standard layout"),
            self.output_bias.as_slice().expect("standard layout"),
        ]
    }
}

/// Embeds the anchors with `model` and picks each one's hardest negative.
pub fn mine_hard_negatives(model: &TripletModel, anchors: &ArrayView2<f64>, labels: &[usize]) -> Result<Vec<usize>> {
    let emb = model.embed_batch(anchors)?;
    hardest_negatives(&emb.view(), labels)
}

/// Views of the same positions under two appearance variants. Row `i` of
/// `anchors` and row `i` of `positives` show position `labels[i]`.
#[derive(Debug, Clone)]
pub struct TripletData {
    pub width: usize,
    pub height: usize,
    pub anchors: Array2<f64>,
    pub positives: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletShape {
    pub hidden: usize,
    pub dim: usize,
    pub alpha: f64,
}

impl Default for TripletShape {
    fn default() -> Self {
        Self {
            hidden: 256,
            dim: 64,
            alpha: 0.2,
        }
    }
}

fn mined_loss(model: &TripletModel, data: &TripletData, rows: &[usize]) -> Result<Option<f64>> {
    let labels: Vec<usize> = rows.iter().map(|&r| data.labels[r]).collect();
    let a = gather_rows(&data.anchors.view(), rows);
    let p = gather_rows(&data.positives.view(), rows);
    match mine_hard_negatives(model, &a.view(), &labels) {
        Ok(neg) => Ok(Some(model.batch_loss(&a.view(), &p.view(), &neg)?)),
        Err(Error::CannotMineNegatives) => Ok(None),
        Err(e) => Err(e),
    }
}

pub fn train_triplet(data: &TripletData, shape: TripletShape, cfg: &TrainConfig) -> Result<(TripletModel, TrainHistory)> {
    cfg.validate()?;
    let n = data.width * data.height;
    if data.anchors.ncols() != n || data.positives.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: data.anchors.ncols(),
        });
    }
    if data.anchors.nrows() != data.positives.nrows() || data.anchors.nrows() != data.labels.len() {
        return Err(Error::InvalidArgument("every anchor needs a positive and a label".into()));
    }
    if data.labels.is_empty() || data.labels.iter().all(|&l| l == data.labels[0]) {
        return Err(Error::CannotMineNegatives);
    }
    if !(shape.alpha > 0.0) || shape.hidden == 0 || shape.dim == 0 {
        return Err(Error::InvalidArgument("triplet shape needs alpha > 0 and non-zero widths".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TripletModel::random(data.width, data.height, shape.hidden, shape.dim, shape.alpha, &mut rng);
    let (mut train_idx, val_idx) = split_indices(data.labels.len(), cfg.validation_fraction, &mut rng);
    let shapes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    let mut opt = AdamW::new(&shapes, cfg.learning_rate, cfg.weight_decay);
    let mut plateau = PlateauHalver::new(cfg.patience);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in train_idx.chunks(cfg.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&r| data.labels[r]).collect();
            let a = gather_rows(&data.anchors.view(), chunk);
            let p = gather_rows(&data.positives.view(), chunk);
            let neg = match mine_hard_negatives(&model, &a.view(), &labels) {
                Ok(neg) => neg,
                Err(Error::CannotMineNegatives) => continue,
                Err(e) => return Err(e),
            };
            let (loss, grads) = model.batch_loss_and_grad(&a.view(), &p.view(), &neg)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            total += loss * chunk.len() as f64;
            count += chunk.len();
            opt.step(&mut model.params_mut(), &grads.slices());
        }
        let train_loss = if count > 0 { total / count as f64 } else { 0.0 };
        let val_loss = mined_loss(&model, data, &val_idx)?.unwrap_or(train_loss);
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
