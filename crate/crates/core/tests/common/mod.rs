//! Independent reference implementations used as test oracles. They favor
//! the most literal formulation over speed and share no code with the
//! library.
#![allow(dead_code)]

pub mod encoding;
pub mod workflow;

use edgeloc::edgemap::CannyParams;
use edgeloc::encoder::autoencoder::{AutoencoderModel, OutputActivation};
use edgeloc::raster::RasterImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn noise_image(w: usize, h: usize, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    RasterImage::from_fn(w, h, |_, _| r.random())
}

/// Random axis-aligned rectangles on a random background, plus mild noise.
pub fn blocky_image(w: usize, h: usize, seed: u64) -> RasterImage {
    let mut r = rng(seed);
    let mut px = vec![r.random_range(0..=255u8); w * h];
    for _ in 0..r.random_range(2..8) {
        let (x0, y0) = (r.random_range(0..w), r.random_range(0..h));
        let (x1, y1) = (r.random_range(x0..=w), r.random_range(y0..=h));
        let v: u8 = r.random();
        for y in y0..y1 {
            for x in x0..x1 {
                px[y * w + x] = v;
            }
        }
    }
    for p in &mut px {
        *p = (*p as i32 + r.random_range(-6..=6)).clamp(0, 255) as u8;
    }
    RasterImage::new(w, h, px).unwrap()
}

fn binomial(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 1..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    row
}

/// Sobel derivative taps: the binomial row of length k−1 differenced with
/// a copy of itself shifted by one.
fn sobel_derivative(k: usize) -> Vec<f64> {
    let b = binomial(k - 1);
    (0..k)
        .map(|i| {
            let left = if i >= 1 { b[i - 1] } else { 0.0 };
            let right = if i < b.len() { b[i] } else { 0.0 };
            left - right
        })
        .collect()
}

fn sobel_kernels(k: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let s = binomial(k);
    let d = sobel_derivative(k);
    let kx = (0..k).map(|i| (0..k).map(|j| s[i] * d[j]).collect()).collect();
    let ky = (0..k).map(|i| (0..k).map(|j| d[i] * s[j]).collect()).collect();
    (kx, ky)
}

/// Textbook Canny: 2-D 5×5 Gaussian (binomial, clamped borders) in real
/// intensity units, 2-D Sobel correlation, direction binned from atan2,
/// non-maximum suppression, then hysteresis grown to a fixpoint.
pub fn naive_canny(img: &RasterImage, p: &CannyParams) -> Vec<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let at = |x: i64, y: i64| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize) as f64;
    let g = binomial(5);
    let mut smooth = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for i in 0..5 {
                for j in 0..5 {
                    acc += g[i] * g[j] * at(x + j as i64 - 2, y + i as i64 - 2);
                }
            }
            smooth[(y * w + x) as usize] = acc / 256.0;
        }
    }

    let k = p.sobel_kernel;
    let r = (k / 2) as i64;
    let (kx, ky) = sobel_kernels(k);
    let idx = |x: i64, y: i64| (y * w + x) as usize;
    let inside = |x: i64, y: i64| x >= r && x < w - r && y >= r && y < h - r;
    let mut mag = vec![0.0; (w * h) as usize];
    let mut dir = vec![0usize; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            if !inside(x, y) {
                continue;
            }
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let v = smooth[idx(x + j as i64 - r, y + i as i64 - r)];
                    gx += kx[i][j] * v;
                    gy += ky[i][j] * v;
                }
            }
            mag[idx(x, y)] = (gx * gx + gy * gy).sqrt();
            let mut deg = gy.atan2(gx).to_degrees();
            if deg < 0.0 {
                deg += 180.0;
            }
            if deg >= 180.0 {
                deg -= 180.0;
            }
            dir[idx(x, y)] = if !(22.5..157.5).contains(&deg) {
                0
            } else if deg < 67.5 {
                1
            } else if deg < 112.5 {
                2
            } else {
                3
            };
        }
    }

    // neighbor offsets along the gradient: horizontal, main diagonal,
    // vertical, anti-diagonal (image rows grow downward)
    let step = [(1, 0), (1, 1), (0, 1), (1, -1)];
    let mut thin = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let m = mag[idx(x, y)];
            if !inside(x, y) || m == 0.0 {
                continue;
            }
            let (dx, dy) = step[dir[idx(x, y)]];
            let before = mag[idx(x - dx, y - dy)];
            let after = mag[idx(x + dx, y + dy)];
            if m > before && m >= after {
                thin[idx(x, y)] = m;
            }
        }
    }

    let mut out: Vec<u8> = thin.iter().map(|&m| (m > 0.0 && m >= p.high_threshold) as u8).collect();
    loop {
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let m = thin[idx(x, y)];
                if out[idx(x, y)] == 1 || m == 0.0 || m < p.low_threshold {
                    continue;
                }
                let linked = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w && ny < h && out[idx(nx, ny)] == 1
                    })
                });
                if linked {
                    out[idx(x, y)] = 1;
                    changed = true;
                }
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Mean squared reconstruction error, one scalar at a time.
pub fn ae_loss_oracle(m: &AutoencoderModel, batch: &[Vec<f64>]) -> f64 {
    let d = m.encode_bias.len();
    let n = m.decode_bias.len();
    let mut total = 0.0;
    for x in batch {
        let mut z = vec![0.0; d];
        for k in 0..d {
            let mut s = m.encode_bias[k];
            for j in 0..n {
                s += m.encode_weights[[k, j]] * x[j];
            }
            z[k] = s;
        }
        for i in 0..n {
            let mut y = m.decode_bias[i];
            for k in 0..d {
                y += m.decode_weights[[i, k]] * z[k];
            }
            if m.output == OutputActivation::Logistic {
                y = 1.0 / (1.0 + (-y).exp());
            }
            total += (x[i] - y) * (x[i] - y);
        }
    }
    total / batch.len() as f64
}

pub fn triplet_loss_oracle(a: &[f64], p: &[f64], n: &[f64], alpha: f64) -> f64 {
    let mut dp = 0.0;
    let mut dn = 0.0;
    for i in 0..a.len() {
        dp += (a[i] - p[i]).powi(2);
        dn += (a[i] - n[i]).powi(2);
    }
    f64::max(0.0, dp - dn + alpha)
}

/// Exhaustive hardest-negative search: sort all other-label candidates by
/// (distance, index) and take the first.
pub fn brute_hardest(emb: &[Vec<f64>], labels: &[usize]) -> Vec<usize> {
    (0..emb.len())
        .map(|i| {
            let mut cands: Vec<(f64, usize)> = (0..emb.len())
                .filter(|&j| labels[j] != labels[i])
                .map(|j| (emb[i].iter().zip(&emb[j]).map(|(a, b)| (a - b).powi(2)).sum(), j))
                .collect();
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
            cands[0].1
        })
        .collect()
}

/// Full-scan ranking: every row scored, sorted by descending score then
/// ascending id.
pub fn brute_ranking(rows: &[Vec<f32>], ids: &[u32], q: &[f32]) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = rows
        .iter()
        .zip(ids)
        .map(|(r, &id)| (id, r.iter().zip(q).map(|(&a, &b)| a as f64 * b as f64).sum()))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all
}

pub fn unit_vec(r: &mut ChaCha8Rng, d: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
