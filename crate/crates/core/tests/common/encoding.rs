//! Encoder fixtures and measurements shared by the encoder suite and the
//! acceptance run.

use edgeloc::encoder::autoencoder::{AutoencoderModel, OutputActivation};
use edgeloc::encoder::bovw::kmeans;
use edgeloc::encoder::optim::TrainConfig;
use edgeloc::encoder::triplet::{hardest_negatives, train_triplet, triplet_loss, TripletData, TripletModel, TripletShape};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{ae_loss_oracle, brute_hardest, rel_err, rng, triplet_loss_oracle};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

pub fn random_batch(r: &mut impl Rng, rows: usize, n: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, n), |_| r.random::<f64>())
}

pub fn rows_of(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Central difference of `f` with respect to every entry of `param`,
/// compared to `analytic`. Returns the worst relative error, with gradients
/// below 1e-6 in magnitude compared absolutely.
pub fn fd_check<M: Clone>(
    model: &M,
    analytic: &[f64],
    param: impl Fn(&mut M) -> &mut [f64],
    f: impl Fn(&M) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let mut plus = model.clone();
        param(&mut plus)[i] += FD_STEP;
        let mut minus = model.clone();
        param(&mut minus)[i] -= FD_STEP;
        let fd = (f(&plus) - f(&minus)) / (2.0 * FD_STEP);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

pub fn random_ae(seed: u64, w: usize, h: usize, d: usize, out: OutputActivation) -> AutoencoderModel {
    let mut r = rng(seed);
    let mut m = AutoencoderModel::random(w, h, d, out, &mut r);
    m.encode_bias = Array1::from_shape_fn(d, |_| r.random_range(-0.5..0.5));
    m.decode_bias = Array1::from_shape_fn(w * h, |_| r.random_range(-0.5..0.5));
    m
}


pub fn separable_positions(seed: u64, per_position: usize) -> (Array2<f64>, Array2<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let bases: Vec<Vec<f64>> = (0..16).map(|_| (0..64).map(|_| r.random::<f64>()).collect()).collect();
    let noise = Normal::new(0.0, 0.1).unwrap();
    let rows = 16 * per_position;
    let mut a = Array2::zeros((rows, 64));
    let mut p = Array2::zeros((rows, 64));
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let pos = i % 16;
        for j in 0..64 {
            a[[i, j]] = bases[pos][j] + noise.sample(&mut r);
            p[[i, j]] = bases[pos][j] + noise.sample(&mut r);
        }
        labels.push(pos);
    }
    (a, p, labels)
}

pub fn triplet_fixture() -> (TripletModel, Vec<f64>) {
    let (anchors, positives, labels) = separable_positions(21, 8);
    let data = TripletData {
        width: 8,
        height: 8,
        anchors,
        positives,
        labels,
    };
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 64,
        seed: 4,
        ..TrainConfig::triplet()
    };
    let shape = TripletShape {
        hidden: 32,
        dim: 8,
        alpha: 0.2,
    };
    let (m, h) = train_triplet(&data, shape, &cfg).unwrap();
    (m, h.train_loss)
}

/// Share of held-out (anchor, positive, negative) triplets with the
/// positive strictly closer than the negative. The generator draws rows in
/// order, so rows past the 128 training rows are fresh noise around the
/// same 16 bases.
pub fn held_out_ordering(m: &TripletModel) -> f64 {
    let (all_a, all_p, all_l) = separable_positions(21, 12);
    let rows: Vec<usize> = (128..192).collect();
    let ta = all_a.select(ndarray::Axis(0), &rows);
    let tp = all_p.select(ndarray::Axis(0), &rows);
    let tl: Vec<usize> = rows.iter().map(|&i| all_l[i]).collect();
    let ea = m.embed_batch(&ta.view()).unwrap();
    let ep = m.embed_batch(&tp.view()).unwrap();
    let d = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let (mut ok, mut total) = (0usize, 0usize);
    for i in 0..ta.nrows() {
        let dp = d(ea.row(i), ep.row(i));
        for j in 0..ta.nrows() {
            if tl[j] == tl[i] {
                continue;
            }
            total += 1;
            ok += usize::from(dp < d(ea.row(i), ep.row(j)));
        }
    }
    ok as f64 / total as f64
}


/// Worst FD relative error over every autoencoder parameter, for a linear
/// and a logistic toy model.
pub fn ae_gradient_worst() -> f64 {
    let mut worst: f64 = 0.0;
    for (seed, out) in [(1, OutputActivation::Linear), (2, OutputActivation::Logistic)] {
        let m = random_ae(seed, 4, 4, 4, out);
        let batch = random_batch(&mut rng(seed + 10), 4, 16);
        let (_, g) = m.loss_and_grad(&batch.view()).unwrap();
        let loss = |m: &AutoencoderModel| m.loss(&batch.view()).unwrap();
        worst = worst
            .max(fd_check(&m, g.encode_weights.as_slice().unwrap(), |m| m.encode_weights.as_slice_mut().unwrap(), loss))
            .max(fd_check(&m, g.encode_bias.as_slice().unwrap(), |m| m.encode_bias.as_slice_mut().unwrap(), loss))
            .max(fd_check(&m, g.decode_weights.as_slice().unwrap(), |m| m.decode_weights.as_slice_mut().unwrap(), loss))
            .max(fd_check(&m, g.decode_bias.as_slice().unwrap(), |m| m.decode_bias.as_slice_mut().unwrap(), loss));
    }
    worst
}

/// Worst FD relative error over every triplet parameter on a batch with
/// active hinges.
pub fn triplet_gradient_worst() -> f64 {
    let mut r = rng(5);
    let m = TripletModel::random(4, 4, 8, 4, 1.0, &mut r);
    let anchors = random_batch(&mut r, 6, 16);
    let positives = &anchors + &random_batch(&mut r, 6, 16).mapv(|v| 0.3 * (v - 0.5));
    let labels = [0, 1, 2, 0, 1, 2];
    let emb = m.embed_batch(&anchors.view()).unwrap();
    let neg = hardest_negatives(&emb.view(), &labels).unwrap();
    let (_, g) = m.batch_loss_and_grad(&anchors.view(), &positives.view(), &neg).unwrap();
    let loss = |m: &TripletModel| m.batch_loss(&anchors.view(), &positives.view(), &neg).unwrap();
    assert!(loss(&m) > 0.0, "toy batch should have active hinges");
    fd_check(&m, g.hidden_weights.as_slice().unwrap(), |m| m.hidden_weights.as_slice_mut().unwrap(), loss)
        .max(fd_check(&m, g.hidden_bias.as_slice().unwrap(), |m| m.hidden_bias.as_slice_mut().unwrap(), loss))
        .max(fd_check(&m, g.output_weights.as_slice().unwrap(), |m| m.output_weights.as_slice_mut().unwrap(), loss))
        .max(fd_check(&m, g.output_bias.as_slice().unwrap(), |m| m.output_bias.as_slice_mut().unwrap(), loss))
}

/// Worst relative deviation of the library reconstruction loss from the
/// scalar oracle over 100 random models and batches.
pub fn ae_loss_worst() -> f64 {
    let mut r = rng(11);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let out = if case % 2 == 0 { OutputActivation::Linear } else { OutputActivation::Logistic };
        let d = r.random_range(1..9);
        let m = random_ae(1000 + case, 8, 8, d, out);
        let rows = r.random_range(1..6);
        let batch = random_batch(&mut r, rows, 64);
        worst = worst.max(rel_err(m.loss(&batch.view()).unwrap(), ae_loss_oracle(&m, &rows_of(&batch))));
    }
    worst
}

/// Worst relative deviation of the triplet hinge from the oracle over 100
/// random triplets.
pub fn triplet_loss_worst() -> f64 {
    let mut r = rng(12);
    let n = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = r.random_range(1..33);
        let v = |r: &mut rand_chacha::ChaCha8Rng| (0..d).map(|_| n.sample(r)).collect::<Vec<f64>>();
        let (a, p, ng) = (v(&mut r), v(&mut r), v(&mut r));
        let alpha = r.random_range(0.01..3.0);
        let (got, want) = (triplet_loss(&a, &p, &ng, alpha).unwrap(), triplet_loss_oracle(&a, &p, &ng, alpha));
        if got != want {
            worst = worst.max(rel_err(got, want));
        }
    }
    worst
}

/// Cases out of 200 where hardest-negative mining disagrees with the
/// exhaustive search. Embeddings sit on a coarse grid so ties occur.
pub fn hardest_negative_mismatches() -> usize {
    let mut r = rng(13);
    let mut bad = 0;
    for _ in 0..200 {
        let d = r.random_range(1..6);
        let positions = r.random_range(2..6);
        let mut labels: Vec<usize> = (0..16).map(|_| r.random_range(0..positions)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let emb: Vec<Vec<f64>> = (0..16).map(|_| (0..d).map(|_| r.random_range(0..4) as f64).collect()).collect();
        let arr = Array2::from_shape_fn((16, d), |(i, j)| emb[i][j]);
        bad += usize::from(hardest_negatives(&arr.view(), &labels).unwrap() != brute_hardest(&emb, &labels));
    }
    bad
}

/// Number of iterations, over 20 seeded Gaussian-mixture datasets, where
/// the k-means objective rose by more than float noise.
pub fn kmeans_objective_increases() -> usize {
    let mut r = rng(31);
    let mut bad = 0;
    for ds in 0..20 {
        let dim = r.random_range(1..6);
        let n = r.random_range(30..200);
        let k = r.random_range(2..8);
        let centers: Vec<Vec<f64>> = (0..k).map(|_| (0..dim).map(|_| r.random_range(-5.0..5.0)).collect()).collect();
        let noise = Normal::new(0.0, 1.5).unwrap();
        let pts = Array2::from_shape_fn((n, dim), |(i, j)| centers[i % k][j] + noise.sample(&mut r));
        let (_, trace) = kmeans(&pts.view(), k, ds).unwrap();
        assert!(!trace.objective.is_empty());
        bad += trace.objective.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    }
    bad
}

/// Largest coordinate gap between k-means centers and the sample means of
/// two well-separated clouds, over 5 trials.
pub fn kmeans_two_cloud_gap() -> f64 {
    let mut r = rng(32);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut worst: f64 = 0.0;
    for trial in 0..5 {
        let (na, nb) = (r.random_range(20..60), r.random_range(20..60));
        let pts = Array2::from_shape_fn((na + nb, 3), |(i, j)| {
            let c = if i < na { -50.0 } else { 50.0 + j as f64 };
            c + noise.sample(&mut r)
        });
        let mean = |rows: std::ops::Range<usize>| {
            let len = rows.len() as f64;
            let mut m = [0.0; 3];
            for i in rows {
                for j in 0..3 {
                    m[j] += pts[[i, j]];
                }
            }
            m.map(|v| v / len)
        };
        let (ma, mb) = (mean(0..na), mean(na..na + nb));
        let (c, _) = kmeans(&pts.view(), 2, trial).unwrap();
        let (ca, cb) = if c[[0, 0]] < 0.0 { (c.row(0), c.row(1)) } else { (c.row(1), c.row(0)) };
        for j in 0..3 {
            worst = worst.max((ca[j] - ma[j]).abs()).max((cb[j] - mb[j]).abs());
        }
    }
    worst
}
