//! Synthetic terrain, seasonal appearance change, trajectories and nadir view
//! rendering.
//!
//! Terrain is a Voronoi partition into "fields", each painted with one of a
//! few intensity levels, with dark road strips and bright building
//! rectangles laid on top. The seasonal shift repaints a share of the
//! fields while keeping differently painted neighbors apart, so boundaries
//! survive even where contrast flips.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geotile::{GeoTransform, PixelCoord, WorldCoord};
use crate::raster::RasterImage;

/// Field intensity levels. Adjacent levels differ enough that a boundary
/// clears the default strong Canny threshold after smoothing.
pub const FIELD_LEVELS: [f64; 4] = [0.0, 85.0, 170.0, 255.0];
const FIELD_JITTER: f64 = 2.0;
pub const ROAD_INTENSITY: f64 = 42.0;
pub const BUILDING_INTENSITY: f64 = 255.0;

const OVERLAY_NONE: u8 = 0;
const OVERLAY_ROAD: u8 = 1;
const OVERLAY_BUILDING: u8 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// meters per pixel
    pub resolution: f64,
    pub origin_easting: f64,
    pub origin_northing: f64,
    /// Voronoi fields per square kilometer; 0 gives a single field.
    pub field_density: f64,
    /// Roads per kilometer of terrain width.
    pub roads_per_km: f64,
    pub road_width: f64,
    /// Buildings per square kilometer.
    pub building_density: f64,
    /// Half-width of the uniform per-pixel intensity noise.
    pub noise: u8,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 2048,
            height: 2048,
            resolution: 1.0,
            origin_easting: 500_000.0,
            origin_northing: 5_000_000.0,
            field_density: 1000.0,
            roads_per_km: 2.0,
            road_width: 6.0,
            building_density: 150.0,
            noise: 4,
        }
    }
}

impl TerrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 64 || self.height < 64 {
            return Err(Error::InvalidArgument(format!(
                "terrain {}x{} is smaller than 64x64",
                self.width, self.height
            )));
        }
        let finite_non_neg = [self.field_density, self.roads_per_km, self.road_width, self.building_density];
        if !(self.resolution > 0.0 && self.resolution.is_finite()) || finite_non_neg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument("terrain densities must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn geo(&self) -> GeoTransform {
        GeoTransform {
            origin_easting: self.origin_easting,
            origin_northing: self.origin_northing,
            resolution: self.resolution,
            row_sign: -1.0,
        }
    }

    fn area_km2(&self) -> f64 {
        self.width as f64 * self.height as f64 * self.resolution * self.resolution / 1e6
    }
}

/// Generated terrain: the year-one raster plus the generator labels the
/// seasonal shift works on.
#[derive(Debug, Clone)]
pub struct Terrain {
    pub spec: TerrainSpec,
    pub geo: GeoTransform,
    pub image: RasterImage,
    labels: Vec<u32>,
    overlay: Vec<u8>,
    region_level: Vec<usize>,
    region_intensity: Vec<f64>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const MAX_REPAIR_PASSES: usize = 50;
const STREAM_SITES: u64 = 1;
const STREAM_LEVELS: u64 = 2;
const STREAM_ROADS: u64 = 3;
const STREAM_BUILDINGS: u64 = 4;
const STREAM_NOISE_BASE: u64 = 1 << 32;

struct SiteGrid {
    cell: f64,
    nx: usize,
    ny: usize,
    sites: Vec<(f64, f64)>,
}

impl SiteGrid {
    fn new(spec: &TerrainSpec, rng: &mut ChaCha8Rng) -> Self {
        let (w, h) = (spec.width as f64, spec.height as f64);
        let cell = if spec.field_density > 0.0 {
            (1000.0 / spec.field_density.sqrt() / spec.resolution).max(1.0)
        } else {
            f64::INFINITY
        };
        let (nx, ny) = if cell.is_finite() {
            ((w / cell).ceil().max(1.0) as usize, (h / cell).ceil().max(1.0) as usize)
        } else {
            (1, 1)
        };
        let (cw, ch) = if cell.is_finite() { (cell, cell) } else { (w, h) };
        let mut sites = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = (i as f64 + rng.random::<f64>()) * cw;
                let y = (j as f64 + rng.random::<f64>()) * ch;
                sites.push((x, y));
            }
        }
        Self { cell, nx, ny, sites }
    }

    /// Nearest site to `(x, y)`; lowest site index on ties. Sites are one
    /// per grid cell, so the 5×5 cell neighborhood always holds the answer.
    fn nearest(&self, x: f64, y: f64) -> u32 {
        if self.sites.len() == 1 {
            return 0;
        }
        let ci = ((x / self.cell) as usize).min(self.nx - 1) as isize;
        let cj = ((y / self.cell) as usize).min(self.ny - 1) as isize;
        let mut best = (u32::MAX, f64::INFINITY);
        for j in (cj - 2).max(0)..=(cj + 2).min(self.ny as isize - 1) {
            for i in (ci - 2).max(0)..=(ci + 2).min(self.nx as isize - 1) {
                let id = j as usize * self.nx + i as usize;
                let (sx, sy) = self.sites[id];
                let d = (sx - x) * (sx - x) + (sy - y) * (sy - y);
                if d < best.1 || (d == best.1 && (id as u32) < best.0) {
                    best = (id as u32, d);
                }
            }
        }
        best.0
    }
}

fn paint_segment(overlay: &mut [u8], width: usize, height: usize, a: (f64, f64), b: (f64, f64), half: f64) {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let x0 = (a.0.min(b.0) - half).floor().max(0.0) as usize;
    let x1 = ((a.0.max(b.0) + half).ceil().max(0.0) as usize).min(width);
    let y0 = (a.1.min(b.1) - half).floor().max(0.0) as usize;
    let y1 = ((a.1.max(b.1) + half).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 { (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (qx, qy) = (a.0 + t * dx - px, a.1 + t * dy - py);
            if qx * qx + qy * qy <= half * half {
                overlay[y * width + x] = OVERLAY_ROAD;
            }
        }
    }
}

fn draw_roads(spec: &TerrainSpec, overlay: &mut [u8], rng: &mut ChaCha8Rng) {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let count = (spec.roads_per_km * w * spec.resolution / 1000.0).round() as usize;
    let half = spec.road_width / spec.resolution / 2.0;
    for _ in 0..count {
        // a gently bending polyline crossing the terrain, either west-east or north-south
        let horizontal = rng.random_bool(0.5);
        let (along, across) = if horizontal { (w, h) } else { (h, w) };
        let mut pts = Vec::new();
        let mut c = rng.random::<f64>() * across;
        for k in 0..=4 {
            pts.push((along * k as f64 / 4.0, c));
            c = (c + (rng.random::<f64>() - 0.5) * 0.3 * along / 4.0).clamp(0.0, across);
        }
        for seg in pts.windows(2) {
            let (a, b) = if horizontal { (seg[0], seg[1]) } else { ((seg[0].1, seg[0].0), (seg[1].1, seg[1].0)) };
            paint_segment(overlay, spec.width, spec.height, a, b, half);
        }
    }
}

fn draw_buildings(spec: &TerrainSpec, overlay: &mut [u8], rng: &mut ChaCha8Rng) {
    let count = (spec.building_density * spec.area_km2()).round() as usize;
    for _ in 0..count {
        let bw = (rng.random_range(8.0..20.0) / spec.resolution).round().max(1.0) as usize;
        let bh = (rng.random_range(8.0..20.0) / spec.resolution).round().max(1.0) as usize;
        let x0 = rng.random_range(0..spec.width);
        let y0 = rng.random_range(0..spec.height);
        for y in y0..(y0 + bh).min(spec.height) {
            for x in x0..(x0 + bw).min(spec.width) {
                overlay[y * spec.width + x] = OVERLAY_BUILDING;
            }
        }
    }
}

pub fn generate_terrain(spec: &TerrainSpec) -> Result<Terrain> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let grid = SiteGrid::new(spec, &mut stream_rng(spec.seed, STREAM_SITES));
    let mut labels = vec![0u32; w * h];
    labels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, l) in row.iter_mut().enumerate() {
            *l = grid.nearest(x as f64 + 0.5, y as f64 + 0.5);
        }
    });
    let mut rng = stream_rng(spec.seed, STREAM_LEVELS);
    let region_level: Vec<usize> = (0..grid.sites.len()).map(|_| rng.random_range(0..FIELD_LEVELS.len())).collect();
    let region_intensity: Vec<f64> = region_level
        .iter()
        .map(|&l| FIELD_LEVELS[l] + rng.random_range(-FIELD_JITTER..=FIELD_JITTER))
        .collect();
    let mut overlay = vec![OVERLAY_NONE; w * h];
    draw_roads(spec, &mut overlay, &mut stream_rng(spec.seed, STREAM_ROADS));
    draw_buildings(spec, &mut overlay, &mut stream_rng(spec.seed, STREAM_BUILDINGS));
    let mut terrain = Terrain {
        spec: spec.clone(),
        geo: spec.geo(),
        image: RasterImage::filled(w, h, 0),
        labels,
        overlay,
        region_level,
        region_intensity,
    };
    terrain.image = terrain.compose(&terrain.region_intensity);
    Ok(terrain)
}

/// Seeded seasonal appearance change. A `change_fraction` of fields move
/// to another level; `strength` scales every field's move, so 0 leaves the
/// terrain unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeasonShift {
    pub seed: u64,
    pub change_fraction: f64,
    pub strength: f64,
}

impl SeasonShift {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            change_fraction: 0.5,
            strength: 1.0,
        }
    }
}

impl Terrain {
    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn region_count(&self) -> usize {
        self.region_level.len()
    }

    /// Field id of each pixel, row-major.
    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    /// True where a road or building covers the field.
    pub fn is_overlay(&self, x: usize, y: usize) -> bool {
        self.overlay[y * self.spec.width + x] != OVERLAY_NONE
    }

    /// Pixels on a boundary between two fields painted at different levels
    /// (4-neighborhood, overlay pixels excluded).
    pub fn field_boundaries(&self) -> Vec<bool> {
        let (w, h) = (self.width(), self.height());
        let mut out = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if self.overlay[i] != OVERLAY_NONE {
                    continue;
                }
                let level = self.region_level[self.labels[i] as usize];
                let differs = |j: usize| self.overlay[j] == OVERLAY_NONE && self.region_level[self.labels[j] as usize] != level;
                out[i] = (x + 1 < w && differs(i + 1)) || (y + 1 < h && differs(i + w)) || (x > 0 && differs(i - 1)) || (y > 0 && differs(i - w));
            }
        }
        out
    }

    fn compose(&self, intensity: &[f64]) -> RasterImage {
        let (w, h) = (self.width(), self.height());
        let noise = self.spec.noise as i32;
        let mut pixels = vec![0u8; w * h];
        pixels.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut rng = stream_rng(self.spec.seed, STREAM_NOISE_BASE + y as u64);
            for (x, p) in row.iter_mut().enumerate() {
                let i = y * w + x;
                let base = match self.overlay[i] {
                    OVERLAY_ROAD => ROAD_INTENSITY,
                    OVERLAY_BUILDING => BUILDING_INTENSITY,
                    _ => intensity[self.labels[i] as usize],
                };
                let n = if noise > 0 { rng.random_range(-noise..=noise) } else { 0 };
                *p = (base.round() as i32 + n).clamp(0, 255) as u8;
            }
        });
        RasterImage::new(w, h, pixels).expect("sized buffer")
    }

    /// Repaints the fields for another season. Roads, buildings and the
    /// pixel noise are unchanged.
    pub fn season_shift(&self, shift: &SeasonShift) -> RasterImage {
        if shift.strength == 0.0 {
            return self.image.clone();
        }
        let new_level = self.shifted_levels(shift);
        let mut rng = stream_rng(shift.seed, 1);
        let shifted: Vec<f64> = new_level
            .iter()
            .zip(&self.region_intensity)
            .map(|(&l, &old)| {
                let target = FIELD_LEVELS[l] + rng.random_range(-FIELD_JITTER..=FIELD_JITTER);
                old + shift.strength * (target - old)
            })
            .collect();
        self.compose(&shifted)
    }

    /// Touching fields of one level form a patch that changes as a unit, so
    /// no new boundary appears. Patches are relabeled greedily in seeded
    /// order, each picking a new level with probability `change_fraction`
    /// and avoiding levels already given to bordering patches, then a repair
    /// pass separates patches that still match a neighbor.
    fn shifted_levels(&self, shift: &SeasonShift) -> Vec<usize> {
        let adjacency = self.adjacency();
        let n = self.region_count();
        let mut patch: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for r in 0..n {
            for &m in &adjacency[r] {
                if self.region_level[m as usize] == self.region_level[r] {
                    let (a, b) = (find(&mut patch, r), find(&mut patch, m as usize));
                    if a != b {
                        patch[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        let roots: Vec<usize> = (0..n).map(|r| find(&mut patch, r)).collect();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for r in 0..n {
            for &m in &adjacency[r] {
                if roots[m as usize] != roots[r] {
                    neighbors[roots[r]].push(roots[m as usize]);
                }
            }
        }
        let mut order: Vec<usize> = (0..n).filter(|&r| roots[r] == r).collect();
        let mut rng = stream_rng(shift.seed, 0);
        order.shuffle(&mut rng);
        let mut new_level: Vec<Option<usize>> = vec![None; n];
        for p in order {
            let old = self.region_level[p];
            let mut others: Vec<usize> = (0..FIELD_LEVELS.len()).filter(|&l| l != old).collect();
            others.shuffle(&mut rng);
            let candidates: Vec<usize> = if rng.random_bool(shift.change_fraction.clamp(0.0, 1.0)) {
                others.iter().copied().chain([old]).collect()
            } else {
                [old].into_iter().chain(others.iter().copied()).collect()
            };
            let free = |c: usize| neighbors[p].iter().all(|&q| new_level[q] != Some(c));
            new_level[p] = Some(candidates.iter().copied().find(|&c| free(c)).unwrap_or(candidates[0]));
        }
        // repair pass: move patches that ended up matching a neighbor to the
        // level with the fewest clashes, until no move helps
        let patches: Vec<usize> = (0..n).filter(|&r| roots[r] == r).collect();
        for _ in 0..MAX_REPAIR_PASSES {
            let mut moved = false;
            for &p in &patches {
                let clashes = |c: usize| neighbors[p].iter().filter(|&&q| new_level[q] == Some(c)).count();
                let current = new_level[p].expect("assigned");
                let here = clashes(current);
                if here == 0 {
                    continue;
                }
                let best = (0..FIELD_LEVELS.len()).min_by_key(|&c| (clashes(c), c != current, c)).expect("levels");
                if clashes(best) < here {
                    new_level[p] = Some(best);
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        roots.iter().map(|&r| new_level[r].expect("every patch visited")).collect()
    }

    /// Field adjacency over the 4-neighborhood, sorted per field.
    fn adjacency(&self) -> Vec<Vec<u32>> {
        let (w, h) = (self.width(), self.height());
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); self.region_count()];
        for y in 0..h {
            for x in 0..w {
                let a = self.labels[y * w + x];
                for b in [(x + 1 < w).then(|| self.labels[y * w + x + 1]), (y + 1 < h).then(|| self.labels[(y + 1) * w + x])]
                    .into_iter()
                    .flatten()
                {
                    if a != b {
                        adj[a as usize].push(b);
                        adj[b as usize].push(a);
                    }
                }
            }
        }
        for v in &mut adj {
            v.sort_unstable();
            v.dedup();
        }
        adj
    }
}

/// Flight profile of a named trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPreset {
    pub name: String,
    /// meters above ground
    pub altitude: f64,
    /// path length, meters
    pub distance: f64,
    /// width of the band the path stays in, meters
    pub band_width: f64,
    pub overlap_fraction: f64,
}

impl TrajectoryPreset {
    pub fn named(name: &str) -> Option<Self> {
        let (altitude, distance, band_width, overlap_fraction) = match name {
            "A" => (40.0, 150.0, 10.0, 0.995),
            "B" => (2000.0, 12000.0, 1000.0, 0.875),
            "C" => (4000.0, 50000.0, 5000.0, 0.875),
            "D" => (2000.0, 2000.0, 2000.0, 0.875),
            _ => return None,
        };
        Some(Self {
            name: name.to_string(),
            altitude,
            distance,
            band_width,
            overlap_fraction,
        })
    }

    /// Same altitude and overlap with distance and band scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            name: format!("{}x{factor}", self.name),
            distance: self.distance * factor,
            band_width: self.band_width * factor,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.altitude > 0.0
            && self.distance >= 0.0
            && self.band_width >= 0.0
            && (0.0..1.0).contains(&self.overlap_fraction)
            && [self.altitude, self.distance, self.band_width].iter().all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid trajectory preset {:?}", self.name)));
        }
        Ok(())
    }

    /// Distance between consecutive poses for a view footprint in meters.
    pub fn spacing(&self, footprint: f64) -> f64 {
        footprint * (1.0 - self.overlap_fraction)
    }

    pub fn pose_count(&self, footprint: f64) -> usize {
        (self.distance / self.spacing(footprint) + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub easting: f64,
    pub northing: f64,
    pub altitude: f64,
    /// degrees, counterclockwise in the image plane
    pub heading: f64,
}

impl Pose {
    pub fn position(&self) -> WorldCoord {
        WorldCoord::new(self.easting, self.northing)
    }
}

/// Straight west-to-east path from `start` with smooth lateral wander that
/// stays within half the band width.
pub fn sample_trajectory(preset: &TrajectoryPreset, start: WorldCoord, footprint: f64, seed: u64) -> Result<Vec<Pose>> {
    preset.validate()?;
    if !(footprint > 0.0) {
        return Err(Error::InvalidArgument("footprint must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random::<f64>() + 0.05, rng.random_range(0.5..3.0), rng.random::<f64>() * std::f64::consts::TAU))
        .collect();
    let total: f64 = waves.iter().map(|w| w.0).sum();
    let half_band = preset.band_width / 2.0;
    let spacing = preset.spacing(footprint);
    let length = preset.distance.max(f64::MIN_POSITIVE);
    Ok((0..preset.pose_count(footprint))
        .map(|i| {
            let s = i as f64 * spacing;
            let wander: f64 = waves
                .iter()
                .map(|&(a, cycles, phase)| a / total * (std::f64::consts::TAU * cycles * s / length + phase).sin())
                .sum();
            Pose {
                easting: start.easting + s,
                northing: start.northing + (half_band * wander).clamp(-half_band, half_band),
                altitude: preset.altitude,
                heading: 0.0,
            }
        })
        .collect())
}

/// View error model: extra rotation and an altitude drop below the planned
/// flight level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// degrees
    pub rotation: f64,
    /// meters
    pub altitude_drop: f64,
}

pub const MAX_ROTATION: f64 = 15.0;
pub const MAX_ALTITUDE_DROP: f64 = 200.0;

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_ROTATION).contains(&self.rotation) || !(0.0..=MAX_ALTITUDE_DROP).contains(&self.altitude_drop) {
            return Err(Error::InvalidArgument(format!(
                "perturbation out of range: rotation {} deg, drop {} m",
                self.rotation, self.altitude_drop
            )));
        }
        Ok(())
    }
}

fn snap(v: f64) -> f64 {
    if v.abs() < 1e-12 {
        0.0
    } else if (v.abs() - 1.0).abs() < 1e-12 {
        v.signum()
    } else {
        v
    }
}

/// Renders a `size`×`size` nadir view centered on the pose. The ground
/// footprint shrinks by `(altitude − drop)/altitude` and the view turns by
/// heading plus rotation; samples are bilinear.
pub fn render_view(img: &RasterImage, geo: &GeoTransform, pose: &Pose, size: usize, pert: &PerturbationSpec) -> Result<RasterImage> {
    pert.validate()?;
    if size == 0 {
        return Err(Error::InvalidArgument("view size must be positive".into()));
    }
    if !(pose.altitude > pert.altitude_drop) {
        return Err(Error::InvalidArgument("altitude drop must be below the flight altitude".into()));
    }
    let scale = (pose.altitude - pert.altitude_drop) / pose.altitude;
    let theta = (pose.heading + pert.rotation).to_radians();
    let (sin, cos) = (snap(theta.sin()), snap(theta.cos()));
    let PixelCoord { x: cx, y: cy } = geo.world_to_pixel(pose.position());
    let half = size as f64 / 2.0;
    let mut pixels = vec![0u8; size * size];
    let ok = pixels.par_chunks_mut(size).enumerate().all(|(i, row)| {
        let v = (i as f64 + 0.5 - half) * scale;
        for (j, p) in row.iter_mut().enumerate() {
            let u = (j as f64 + 0.5 - half) * scale;
            let sx = cx + u * cos - v * sin - 0.5;
            let sy = cy + u * sin + v * cos - 0.5;
            match img.sample_bilinear(sx, sy) {
                Some(val) => *p = val.round().clamp(0.0, 255.0) as u8,
                None => return false,
            }
        }
        true
    });
    if !ok {
        return Err(Error::ViewOutOfBounds);
    }
    RasterImage::new(size, size, pixels)
}
