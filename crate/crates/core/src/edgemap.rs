//! Binary edge maps: a native Canny detector and import/export of
//! externally produced boundary maps.
//!
//! The detector runs entirely in integer arithmetic. Smoothing uses the
//! 5-tap binomial kernel `[1, 4, 6, 4, 1] / 16`, whose variance is exactly 1,
//! so it is the σ = 1 Gaussian at this support. The smoothed image is kept at
//! 256× scale, Sobel responses are exact integers and thresholds are compared
//! on squared magnitudes. Thresholds are in raw Sobel units on 8-bit input.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Binary mask, row-major, 1 = edge pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl std::fmt::Debug for EdgeMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EdgeMap")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("edges", &self.edge_count())
            .finish()
    }
}

impl EdgeMap {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: bits.len(),
            });
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("edge map values must be 0 or 1".into()));
        }
        Ok(Self { width, height, bits })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn edge_count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn edge_fraction(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.edge_count() as f64 / self.bits.len() as f64
        }
    }

    /// Binarizes a grayscale image: values above 127 become edges.
    pub fn from_raster(img: &RasterImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&p| u8::from(p > 127)).collect(),
        }
    }

    /// Edges as 255, background as 0.
    pub fn to_raster(&self) -> RasterImage {
        let px = self.bits.iter().map(|&b| b * 255).collect();
        RasterImage::new(self.width, self.height, px).expect("dimensions preserved")
    }

    pub fn to_unit(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_raster().write_pgm(path)
    }
}

/// Loads an externally produced boundary map (PGM or PNG) and binarizes it.
pub fn import_edge_map(path: impl AsRef<Path>, expected_size: (usize, usize)) -> Result<EdgeMap> {
    let path = path.as_ref();
    let img = match RasterImage::read(path) {
        Ok(img) => img,
        Err(Error::Io { source, .. }) if source.kind() != std::io::ErrorKind::NotFound => {
            return Err(Error::bad_image(path, source.to_string()))
        }
        Err(e) => return Err(e),
    };
    let found = (img.width(), img.height());
    if found != expected_size {
        return Err(Error::EdgeMapSizeMismatch {
            expected: expected_size,
            found,
        });
    }
    Ok(EdgeMap::from_raster(&img))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    pub low_threshold: f64,
    pub high_threshold: f64,
    pub sobel_kernel: usize,
    pub gaussian_sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            low_threshold: 100.0,
            high_threshold: 200.0,
            sobel_kernel: 3,
            gaussian_sigma: 1.0,
        }
    }
}

/// Separable Sobel factors `(smoothing, derivative)` for an odd aperture.
pub fn sobel_factors(ksize: usize) -> Option<(&'static [i64], &'static [i64])> {
    match ksize {
        3 => Some((&[1, 2, 1], &[-1, 0, 1])),
        5 => Some((&[1, 4, 6, 4, 1], &[-1, -2, 0, 2, 1])),
        7 => Some((&[1, 6, 15, 20, 15, 6, 1], &[-1, -4, -5, 0, 5, 4, 1])),
        _ => None,
    }
}

impl CannyParams {
    /// Largest single-axis Sobel response to a unit step, per intensity level.
    pub fn kernel_gain(&self) -> Option<f64> {
        let (s, d) = sobel_factors(self.sobel_kernel)?;
        let pos: i64 = d.iter().filter(|&&v| v > 0).sum();
        Some((pos * s.iter().sum::<i64>()) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidCannyParams(m));
        let Some(gain) = self.kernel_gain() else {
            return bad(format!("sobel kernel {} not in {{3, 5, 7}}", self.sobel_kernel));
        };
        if self.gaussian_sigma != 1.0 {
            return bad(format!("gaussian sigma {} unsupported (fixed at 1.0)", self.gaussian_sigma));
        }
        let bound = 255.0 * gain * std::f64::consts::SQRT_2;
        if !(self.low_threshold >= 0.0
            && self.low_threshold <= self.high_threshold
            && self.high_threshold <= bound)
        {
            return bad(format!(
                "thresholds must satisfy 0 <= low ({}) <= high ({}) <= {bound:.1}",
                self.low_threshold, self.high_threshold
            ));
        }
        Ok(())
    }
}

const GAUSS5: [i64; 5] = [1, 4, 6, 4, 1];
/// Scale of the smoothed image relative to input intensities.
const SMOOTH_SCALE: f64 = 256.0;
const TAN_22_5: f64 = 0.414_213_562_373_095_03;
const TAN_67_5: f64 = 2.414_213_562_373_095;

/// Canny edge detection.
pub fn canny(img: &RasterImage, p: &CannyParams) -> Result<EdgeMap> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    if w == 0 || h == 0 {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    let smoothed = smooth(img);
    let (gx, gy) = sobel(&smoothed, w, h, p.sobel_kernel);
    let mag2: Vec<i64> = gx.iter().zip(&gy).map(|(a, b)| a * a + b * b).collect();
    let thin = non_max_suppression(&mag2, &gx, &gy, w, h, p.sobel_kernel / 2);
    let lo = p.low_threshold * SMOOTH_SCALE;
    let hi = p.high_threshold * SMOOTH_SCALE;
    let bits = hysteresis(&thin, w, h, lo * lo, hi * hi);
    Ok(EdgeMap { width: w, height: h, bits })
}

fn smooth(img: &RasterImage) -> Vec<i64> {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut horiz = vec![0i64; w * h];
    horiz.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0;
            for (k, g) in GAUSS5.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - 2, w);
                acc += g * px[y * w + sx] as i64;
            }
            *out = acc;
        }
    });
    let mut out = vec![0i64; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let mut acc = 0;
            for (k, g) in GAUSS5.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - 2, h);
                acc += g * horiz[sy * w + x];
            }
            *o = acc;
        }
    });
    out
}

/// Integer Sobel responses; zero wherever the aperture leaves the image.
fn sobel(s: &[i64], w: usize, h: usize, ksize: usize) -> (Vec<i64>, Vec<i64>) {
    let (smooth_k, deriv_k) = sobel_factors(ksize).expect("validated kernel");
    let r = ksize / 2;
    let mut gx = vec![0i64; w * h];
    let mut gy = vec![0i64; w * h];
    if w <= 2 * r || h <= 2 * r {
        return (gx, gy);
    }
    gx.par_chunks_mut(w)
        .zip(gy.par_chunks_mut(w))
        .enumerate()
        .filter(|(y, _)| *y >= r && *y < h - r)
        .for_each(|(y, (rx, ry))| {
            for x in r..w - r {
                let (mut ax, mut ay) = (0i64, 0i64);
                for i in 0..ksize {
                    let row = &s[(y + i - r) * w + x - r..(y + i - r) * w + x + r + 1];
                    for (j, &v) in row.iter().enumerate() {
                        ax += smooth_k[i] * deriv_k[j] * v;
                        ay += deriv_k[i] * smooth_k[j] * v;
                    }
                }
                rx[x] = ax;
                ry[x] = ay;
            }
        });
    (gx, gy)
}

/// Keeps squared magnitudes that are maxima across the quantized gradient
/// direction. A pixel must strictly beat its neighbor on the negative side
/// and at least match the one on the positive side, so plateaus two pixels
/// wide collapse to one.
fn non_max_suppression(mag2: &[i64], gx: &[i64], gy: &[i64], w: usize, h: usize, r: usize) -> Vec<i64> {
    let mut out = vec![0i64; w * h];
    if w <= 2 * r || h <= 2 * r {
        return out;
    }
    out.par_chunks_mut(w)
        .enumerate()
        .filter(|(y, _)| *y >= r && *y < h - r)
        .for_each(|(y, row)| {
            for x in r..w - r {
                let i = y * w + x;
                let m = mag2[i];
                if m == 0 {
                    continue;
                }
                let ax = gx[i].abs() as f64;
                let ay = gy[i].abs() as f64;
                let (neg, pos) = if ay <= ax * TAN_22_5 {
                    (i - 1, i + 1)
                } else if ay >= ax * TAN_67_5 {
                    (i - w, i + w)
                } else if (gx[i] > 0) == (gy[i] > 0) {
                    (i - w - 1, i + w + 1)
                } else {
                    (i + w - 1, i - w + 1)
                };
                if m > mag2[neg] && m >= mag2[pos] {
                    row[x] = m;
                }
            }
        });
    out
}

fn hysteresis(thin: &[i64], w: usize, h: usize, lo2: f64, hi2: f64) -> Vec<u8> {
    let mut out = vec![0u8; w * h];
    let mut stack = Vec::new();
    let weak = |i: usize| thin[i] > 0 && thin[i] as f64 >= lo2;
    for start in 0..w * h {
        if out[start] != 0 || thin[start] == 0 || (thin[start] as f64) < hi2 {
            continue;
        }
        out[start] = 1;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    let j = ny * w + nx;
                    if out[j] == 0 && weak(j) {
                        out[j] = 1;
                        stack.push(j);
                    }
                }
            }
        }
    }
    out
}
