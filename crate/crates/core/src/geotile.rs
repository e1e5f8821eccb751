//! Georeferencing and reference-tile generation.
//!
//! A [`GeoTransform`] maps continuous pixel coordinates (the top-left corner
//! of pixel `(0, 0)` is `(0.0, 0.0)`) to metric world coordinates. Rasters
//! carry it in a four-line world-file sidecar:
//!
//! ```text
//! <resolution m/px>
//! <origin easting>
//! <origin northing>
//! <row sign: -1 when northing decreases with the row index>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

/// Metric world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldCoord {
    pub easting: f64,
    pub northing: f64,
}

impl WorldCoord {
    pub fn new(easting: f64, northing: f64) -> Self {
        Self { easting, northing }
    }

    pub fn distance(&self, other: &WorldCoord) -> f64 {
        (self.easting - other.easting).hypot(self.northing - other.northing)
    }
}

/// North-up affine georeferencing with square pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_easting: f64,
    pub origin_northing: f64,
    /// Ground size of one pixel in meters.
    pub resolution: f64,
    /// `-1.0` when northing decreases as the row index grows (the usual case).
    pub row_sign: f64,
}

impl GeoTransform {
    pub fn new(origin_easting: f64, origin_northing: f64, resolution: f64) -> Result<Self> {
        let t = Self {
            origin_easting,
            origin_northing,
            resolution,
            row_sign: -1.0,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "resolution must be positive, got {}",
                self.resolution
            )));
        }
        if self.row_sign != -1.0 && self.row_sign != 1.0 {
            return Err(Error::InvalidArgument(format!(
                "row sign must be -1 or 1, got {}",
                self.row_sign
            )));
        }
        if !self.origin_easting.is_finite() || !self.origin_northing.is_finite() {
            return Err(Error::InvalidArgument("non-finite origin".into()));
        }
        Ok(())
    }

    pub fn pixel_to_world(&self, px: PixelCoord) -> WorldCoord {
        WorldCoord {
            easting: self.origin_easting + px.x * self.resolution,
            northing: self.origin_northing + self.row_sign * px.y * self.resolution,
        }
    }

    pub fn world_to_pixel(&self, w: WorldCoord) -> PixelCoord {
        PixelCoord {
            x: (w.easting - self.origin_easting) / self.resolution,
            y: (w.northing - self.origin_northing) / (self.row_sign * self.resolution),
        }
    }

    /// Transform of the sub-raster whose top-left pixel is `(col, row)`.
    pub fn shifted(&self, col: usize, row: usize) -> Self {
        let o = self.pixel_to_world(PixelCoord {
            x: col as f64,
            y: row as f64,
        });
        Self {
            origin_easting: o.easting,
            origin_northing: o.northing,
            ..*self
        }
    }

    pub fn to_world_file(&self) -> String {
        format!(
            "{}\n{}\n{}\n{}\n",
            self.resolution, self.origin_easting, self.origin_northing, self.row_sign
        )
    }

    pub fn parse_world_file(text: &str) -> Result<Self> {
        let values: Vec<f64> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad world file line {l:?}")))
            })
            .collect::<Result<_>>()?;
        if values.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "world file needs 4 values, found {}",
                values.len()
            )));
        }
        let t = Self {
            resolution: values[0],
            origin_easting: values[1],
            origin_northing: values[2],
            row_sign: values[3],
        };
        t.validate()?;
        Ok(t)
    }

    pub fn read_world_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_world_file(&text)
    }

    pub fn write_world_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_world_file()).map_err(|e| Error::io(path, e))
    }
}

/// Sidecar path for a raster: `terrain.pgm` → `terrain.wld`.
pub fn world_file_path(raster: &Path) -> PathBuf {
    raster.with_extension("wld")
}

/// Reads a raster together with its `.wld` sidecar.
pub fn read_georaster(path: impl AsRef<Path>) -> Result<(RasterImage, GeoTransform)> {
    let path = path.as_ref();
    let img = RasterImage::read(path)?;
    let geo = GeoTransform::read_world_file(world_file_path(path))?;
    Ok((img, geo))
}

pub fn write_georaster(path: impl AsRef<Path>, img: &RasterImage, geo: &GeoTransform) -> Result<()> {
    let path = path.as_ref();
    img.write_pgm(path)?;
    geo.write_world_file(world_file_path(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileGridSpec {
    pub tile_size: usize,
    pub overlap_fraction: f64,
}

impl Default for TileGridSpec {
    fn default() -> Self {
        Self {
            tile_size: 256,
            overlap_fraction: 0.875,
        }
    }
}

impl TileGridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidArgument(format!(
                "overlap fraction {} outside [0, 1)",
                self.overlap_fraction
            )));
        }
        Ok(())
    }

    /// Pixel step between adjacent tiles, rounded to nearest and at least 1.
    pub fn stride(&self) -> usize {
        let s = (self.tile_size as f64 * (1.0 - self.overlap_fraction)).round();
        (s as usize).max(1)
    }

    /// Number of tiles that fit along an axis of `extent` pixels.
    pub fn count_along(&self, extent: usize) -> usize {
        if extent < self.tile_size {
            0
        } else {
            (extent - self.tile_size) / self.stride() + 1
        }
    }
}

/// One fixed-size reference view with its world center.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub id: u32,
    pub pixels: RasterImage,
    pub center: WorldCoord,
    /// Top-left pixel of the tile within the source raster.
    pub col: usize,
    pub row: usize,
}

/// Cuts `img` into overlapping tiles laid out row-major. Remainder pixels at
/// the right and bottom edges are dropped.
pub fn generate_tiles(img: &RasterImage, geo: &GeoTransform, spec: &TileGridSpec) -> Result<Vec<Tile>> {
    spec.validate()?;
    geo.validate()?;
    let t = spec.tile_size;
    if img.width() < t || img.height() < t {
        return Err(Error::RasterTooSmall {
            width: img.width(),
            height: img.height(),
            tile_size: t,
        });
    }
    let stride = spec.stride();
    let nx = spec.count_along(img.width());
    let ny = spec.count_along(img.height());
    let half = t as f64 / 2.0;
    (0..nx * ny)
        .into_par_iter()
        .map(|i| {
            let (ty, tx) = (i / nx, i % nx);
            let (col, row) = (tx * stride, ty * stride);
            let center = geo.pixel_to_world(PixelCoord {
                x: col as f64 + half,
                y: row as f64 + half,
            });
            Ok(Tile {
                id: i as u32,
                pixels: img.crop(col, row, t, t)?,
                center,
                col,
                row,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u32,
    pub easting: f64,
    pub northing: f64,
}

/// Tiling provenance stored next to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TilingInfo {
    pub grid: TileGridSpec,
    pub stride: usize,
    pub geo: GeoTransform,
    pub count: usize,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TILING_FILE: &str = "tiling.json";

pub fn tile_file_name(id: u32) -> String {
    format!("tile_{id:06}.pgm")
}

/// Writes tiles as PGM files plus `manifest.json` (and `tiling.json` when
/// `info` is given).
pub fn write_tileset(dir: impl AsRef<Path>, tiles: &[Tile], info: Option<&TilingInfo>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for tile in tiles {
        tile.pixels.write_pgm(dir.join(tile_file_name(tile.id)))?;
    }
    let manifest: Vec<ManifestEntry> = tiles
        .iter()
        .map(|t| ManifestEntry {
            id: t.id,
            easting: t.center.easting,
            northing: t.center.northing,
        })
        .collect();
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    if let Some(info) = info {
        let path = dir.join(TILING_FILE);
        fs::write(&path, serde_json::to_string_pretty(info)?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Reads the manifest and the tile images it lists. Tile `col`/`row` are
/// unknown after a round trip and set to zero.
pub fn read_tileset(dir: impl AsRef<Path>) -> Result<Vec<Tile>> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    manifest
        .into_iter()
        .map(|m| {
            Ok(Tile {
                id: m.id,
                pixels: RasterImage::read(dir.join(tile_file_name(m.id)))?,
                center: WorldCoord::new(m.easting, m.northing),
                col: 0,
                row: 0,
            })
        })
        .collect()
}

pub fn read_tiling_info(dir: impl AsRef<Path>) -> Result<Option<TilingInfo>> {
    let path = dir.as_ref().join(TILING_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}
