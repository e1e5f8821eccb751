//! Bag of visual words over dense-grid patch descriptors.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERATIONS: usize = 100;

/// Dense descriptor grid: square patches of `patch` pixels every `stride`
/// pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    pub patch: usize,
    pub stride: usize,
}

impl Default for DescriptorSpec {
    fn default() -> Self {
        Self { patch: 8, stride: 4 }
    }
}

impl DescriptorSpec {
    pub fn dim(&self) -> usize {
        self.patch * self.patch
    }
}

/// Zero-mean, unit-norm patch intensities on a regular grid. Flat patches
/// yield the zero vector.
pub fn dense_descriptors(width: usize, height: usize, pixels: &[f64], spec: &DescriptorSpec) -> Result<Array2<f64>> {
    if spec.patch == 0 || spec.stride == 0 {
        return Err(Error::InvalidArgument("patch and stride must be positive".into()));
    }
    if width < spec.patch || height < spec.patch {
        return Err(Error::ImageTooSmall {
            width,
            height,
            patch: spec.patch,
        });
    }
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            got: pixels.len(),
        });
    }
    let p = spec.patch;
    let xs: Vec<usize> = (0..=width - p).step_by(spec.stride).collect();
    let ys: Vec<usize> = (0..=height - p).step_by(spec.stride).collect();
    let mut out = Array2::zeros((xs.len() * ys.len(), p * p));
    let mut row = 0;
    for &y0 in &ys {
        for &x0 in &xs {
            let mut d = out.row_mut(row);
            for dy in 0..p {
                for dx in 0..p {
                    d[dy * p + dx] = pixels[(y0 + dy) * width + x0 + dx];
                }
            }
            let mean = d.sum() / (p * p) as f64;
            d.mapv_inplace(|v| v - mean);
            let norm = d.dot(&d).sqrt();
            if norm > 1e-12 {
                d /= norm;
            } else {
                d.fill(0.0);
            }
            row += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BovwCodebook {
    /// k × descriptor dim
    pub centroids: Array2<f64>,
    pub descriptor: DescriptorSpec,
}

impl BovwCodebook {
    pub fn k(&self) -> usize {
        self.centroids.nrows()
    }

    /// Index of the nearest centroid (lowest index on ties).
    pub fn nearest(&self, x: &ArrayView1<f64>) -> usize {
        nearest_centroid(&self.centroids.view(), x).0
    }

    /// Normalized visual-word histogram of an image.
    pub fn embed(&self, width: usize, height: usize, pixels: &[f64]) -> Result<Vec<f64>> {
        let desc = dense_descriptors(width, height, pixels, &self.descriptor)?;
        let mut hist = vec![0.0; self.k()];
        for d in desc.outer_iter() {
            hist[self.nearest(&d)] += 1.0;
        }
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        hist.iter_mut().for_each(|v| *v /= norm);
        Ok(hist)
    }

    pub(crate) fn round_to_f32(&mut self) {
        self.centroids.mapv_inplace(|v| v as f32 as f64);
    }
}

fn sq_dist(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(centroids: &ArrayView2<f64>, x: &ArrayView1<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.outer_iter().enumerate() {
        let d = sq_dist(&c, x);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Convergence record of one k-means fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KMeansTrace {
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn assign(points: &ArrayView2<f64>, centroids: &ArrayView2<f64>) -> (Vec<usize>, Vec<f64>) {
    (0..points.nrows())
        .into_par_iter()
        .map(|i| nearest_centroid(centroids, &points.row(i)))
        .unzip()
}

/// Distance-weighted seeding: each new center is drawn with probability
/// proportional to its squared distance from the centers chosen so far.
fn seed_centroids(points: &ArrayView2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.outer_iter().map(|p| sq_dist(&p, &points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "only {c} distinct descriptors for {k} clusters"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // floating-point leftovers can land on a zero-weight tail
        while d2[pick] <= 0.0 {
            pick -= 1;
        }
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.outer_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(&p, &centroids.row(c)));
        }
    }
    Ok(centroids)
}

/// Lloyd iterations from a seeded start until assignments stop changing or
/// [`KMEANS_MAX_ITERATIONS`] is reached. Returns the centroids and the trace.
pub fn kmeans(points: &ArrayView2<f64>, k: usize, seed: u64) -> Result<(Array2<f64>, KMeansTrace)> {
    let n = points.nrows();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if n < k {
        return Err(Error::TooFewDescriptors { got: n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(points, k, &mut rng)?;
    let mut trace = KMeansTrace::default();
    let mut prev: Option<Vec<usize>> = None;
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let (labels, dists) = assign(points, &centroids.view());
        trace.objective.push(dists.iter().sum());
        trace.iterations += 1;
        if prev.as_ref() == Some(&labels) {
            trace.converged = true;
            break;
        }
        let mut sums = Array2::<f64>::zeros(centroids.raw_dim());
        let mut counts = vec![0usize; k];
        for (p, &l) in points.outer_iter().zip(&labels) {
            sums.row_mut(l).scaled_add(1.0, &p);
            counts[l] += 1;
        }
        let mut taken: Vec<usize> = Vec::new();
        for j in 0..k {
            if counts[j] > 0 {
                let mut row = centroids.row_mut(j);
                row.assign(&sums.row(j));
                row /= counts[j] as f64;
            } else {
                // reseed an empty cluster at the point worst served by its centroid
                let far = (0..n)
                    .filter(|i| !taken.contains(i))
                    .fold((0usize, f64::NEG_INFINITY), |best, i| if dists[i] > best.1 { (i, dists[i]) } else { best })
                    .0;
                taken.push(far);
                centroids.row_mut(j).assign(&points.row(far));
            }
        }
        prev = Some(labels);
    }
    Ok((centroids, trace))
}

pub fn fit_codebook(descriptors: &ArrayView2<f64>, k: usize, descriptor: DescriptorSpec, seed: u64) -> Result<(BovwCodebook, KMeansTrace)> {
    if descriptors.ncols() != descriptor.dim() {
        return Err(Error::DimensionMismatch {
            expected: descriptor.dim(),
            got: descriptors.ncols(),
        });
    }
    let (centroids, trace) = kmeans(descriptors, k, seed)?;
    let mut cb = BovwCodebook { centroids, descriptor };
    cb.round_to_f32();
    Ok((cb, trace))
}
