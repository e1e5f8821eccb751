//! 8-bit grayscale rasters and their on-disk encodings (binary PGM, PNG).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for RasterImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RasterImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RasterImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    /// Copies the `w`×`h` window whose top-left pixel is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}@({x0},{y0}) exceeds {}x{} raster",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let start = y * self.width + x0;
            pixels.extend_from_slice(&self.pixels[start..start + w]);
        }
        Ok(Self {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Bilinear sample at continuous pixel-index coordinates (pixel `i` sits
    /// at coordinate `i`). Returns `None` when the 2×2 support leaves the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        if x0 >= self.width || y0 >= self.height {
            return None;
        }
        let x1 = if fx > 0.0 { x0 + 1 } else { x0 };
        let y1 = if fy > 0.0 { y0 + 1 } else { y0 };
        if x1 >= self.width || y1 >= self.height {
            return None;
        }
        let p00 = self.get(x0, y0) as f64;
        let p10 = self.get(x1, y0) as f64;
        let p01 = self.get(x0, y1) as f64;
        let p11 = self.get(x1, y1) as f64;
        let top = p00 + (p10 - p00) * fx;
        let bottom = p01 + (p11 - p01) * fx;
        Some(top + (bottom - top) * fy)
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f64> {
        self.pixels.iter().map(|&p| p as f64 / 255.0).collect()
    }

    /// Adds `delta` to every pixel, saturating at the 8-bit range.
    pub fn shifted(&self, delta: i32) -> Self {
        let pixels = self
            .pixels
            .iter()
            .map(|&p| (p as i32 + delta).clamp(0, 255) as u8)
            .collect();
        Self {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let mut tokens = Vec::with_capacity(4);
        while tokens.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            tokens.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if tokens[0] != "P5" {
            return Err(format!("not a binary PGM (magic {:?})", tokens[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header field {s:?}"));
        let width = parse(&tokens[1])?;
        let height = parse(&tokens[2])?;
        let maxval = parse(&tokens[3])?;
        if maxval == 0 || maxval > 255 {
            return Err(format!("unsupported maxval {maxval}"));
        }
        // exactly one whitespace byte separates the header from the samples
        pos += 1;
        let n = width * height;
        if bytes.len() < pos + n {
            return Err("truncated pixel data".into());
        }
        let mut pixels = bytes[pos..pos + n].to_vec();
        if maxval != 255 {
            for p in &mut pixels {
                *p = ((*p as usize * 255 + maxval / 2) / maxval).min(255) as u8;
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Reads a binary PGM or a PNG (converted to 8-bit luma).
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.starts_with(b"P5") {
            return Self::decode_pgm(&bytes).map_err(|r| Error::bad_image(path, r));
        }
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::bad_image(path, e.to_string()))?
            .into_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            pixels: img.into_raw(),
        })
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_pgm())
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = RasterImage::from_fn(5, 3, |x, y| (x * 40 + y) as u8);
        let back = RasterImage::decode_pgm(&img.encode_pgm()).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn pgm_with_comment_and_low_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n15\n".to_vec();
        bytes.extend_from_slice(&[0, 15]);
        let img = RasterImage::decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[0, 255]);
    }

    #[test]
    fn rejects_ascii_pgm() {
        assert!(RasterImage::decode_pgm(b"P2\n1 1\n255\n0\n").is_err());
    }

    #[test]
    fn bilinear_hits_pixels_exactly_on_integer_coordinates() {
        let img = RasterImage::from_fn(4, 4, |x, y| (x * 10 + y * 50) as u8);
        assert_eq!(img.sample_bilinear(2.0, 3.0), Some(170.0));
        assert_eq!(img.sample_bilinear(3.0, 3.0), Some(180.0));
        assert_eq!(img.sample_bilinear(0.5, 0.0), Some(5.0));
        assert_eq!(img.sample_bilinear(3.5, 0.0), None);
        assert_eq!(img.sample_bilinear(-0.1, 0.0), None);
    }

    #[test]
    fn crop_copies_window() {
        let img = RasterImage::from_fn(6, 6, |x, y| (y * 6 + x) as u8);
        let c = img.crop(2, 3, 2, 2).unwrap();
        assert_eq!(c.pixels(), &[20, 21, 26, 27]);
        assert!(img.crop(5, 5, 2, 2).is_err());
    }
}
