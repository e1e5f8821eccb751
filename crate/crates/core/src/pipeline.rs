//! End-to-end wiring: scenario generation, encoder training, index build
//! and per-frame localization. Shared by the command line and benchmarks.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    dense_descriptors, fit_codebook, train_autoencoder, train_triplet, DescriptorSpec, EncoderModel, KMeansTrace, ModelInput, OutputActivation,
    Representation, TrainConfig, TrainHistory, TripletData, TripletShape,
};
use crate::encoder::{stack_inputs, Backend, Embedding};
use crate::error::{Error, Result};
use crate::evaluate::{report_from_outcomes, EvalReport, FrameOutcome};
use crate::geotile::{generate_tiles, GeoTransform, PixelCoord, Tile, TileGridSpec, TilingInfo, WorldCoord};
use crate::index::{LocalizeParams, ReferenceIndex};
use crate::raster::RasterImage;
use crate::simulator::{generate_terrain, render_view, sample_trajectory, PerturbationSpec, Pose, SeasonShift, Terrain, TerrainSpec, TrajectoryPreset};

/// Everything needed to train one embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub backend: Backend,
    pub representation: Representation,
    pub dim: usize,
    pub train: TrainConfig,
    pub triplet_hidden: usize,
    pub triplet_alpha: f64,
    pub descriptor: DescriptorSpec,
    /// Cap on descriptors fed to k-means, taken at an even stride.
    pub max_descriptors: usize,
}

impl EncoderSpec {
    pub fn new(backend: Backend, representation: Representation, dim: usize) -> Self {
        let train = match backend {
            Backend::Triplet => TrainConfig::triplet(),
            _ => TrainConfig::autoencoder(),
        };
        Self {
            backend,
            representation,
            dim,
            train,
            triplet_hidden: TripletShape::default().hidden,
            triplet_alpha: TripletShape::default().alpha,
            descriptor: DescriptorSpec::default(),
            max_descriptors: 50_000,
        }
    }

    /// Logistic reconstruction for binary inputs, linear otherwise.
    pub fn output_activation(&self) -> OutputActivation {
        if self.representation.is_binary() {
            OutputActivation::Logistic
        } else {
            OutputActivation::Linear
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedEncoder {
    pub model: EncoderModel,
    pub history: Option<TrainHistory>,
    pub kmeans: Option<KMeansTrace>,
}

pub fn prepare_all(rep: &Representation, images: &[&RasterImage]) -> Result<Vec<ModelInput>> {
    images.par_iter().map(|img| rep.prepare(img)).collect()
}

/// Trains the backend on reference views. The triplet backend also needs
/// `alternate`: the same positions under a second appearance.
pub fn train_encoder(spec: &EncoderSpec, views: &[&RasterImage], alternate: Option<&[&RasterImage]>) -> Result<TrainedEncoder> {
    let first = views.first().ok_or_else(|| Error::InvalidArgument("no training views".into()))?;
    let (w, h) = (first.width(), first.height());
    let inputs = prepare_all(&spec.representation, views)?;
    match spec.backend {
        Backend::Autoencoder => {
            let data = stack_inputs(&inputs)?;
            let (model, history) = train_autoencoder(&data.view(), w, h, spec.dim, spec.output_activation(), &spec.train)?;
            Ok(TrainedEncoder {
                model: EncoderModel::Autoencoder(model),
                history: Some(history),
                kmeans: None,
            })
        }
        Backend::Triplet => {
            let alt = alternate.ok_or_else(|| Error::InvalidArgument("triplet training needs views from a second appearance".into()))?;
            if alt.len() != views.len() {
                return Err(Error::LengthMismatch {
                    left: views.len(),
                    right: alt.len(),
                });
            }
            let alt_inputs = prepare_all(&spec.representation, alt)?;
            let data = TripletData {
                width: w,
                height: h,
                anchors: stack_inputs(&inputs)?,
                positives: stack_inputs(&alt_inputs)?,
                labels: (0..views.len()).collect(),
            };
            let shape = TripletShape {
                hidden: spec.triplet_hidden,
                dim: spec.dim,
                alpha: spec.triplet_alpha,
            };
            let (model, history) = train_triplet(&data, shape, &spec.train)?;
            Ok(TrainedEncoder {
                model: EncoderModel::Triplet(model),
                history: Some(history),
                kmeans: None,
            })
        }
        Backend::Bovw => {
            let per_view: Vec<ndarray::Array2<f64>> = inputs
                .par_iter()
                .map(|i| dense_descriptors(i.width, i.height, &i.values, &spec.descriptor))
                .collect::<Result<_>>()?;
            let total: usize = per_view.iter().map(|d| d.nrows()).sum();
            let step = total.div_ceil(spec.max_descriptors.max(1)).max(1);
            let rows: Vec<ndarray::ArrayView1<f64>> = per_view.iter().flat_map(|d| d.outer_iter()).step_by(step).collect();
            let mut all = ndarray::Array2::zeros((rows.len(), spec.descriptor.dim()));
            for (mut dst, src) in all.outer_iter_mut().zip(rows) {
                dst.assign(&src);
            }
            let (cb, trace) = fit_codebook(&all.view(), spec.dim, spec.descriptor, spec.train.seed)?;
            Ok(TrainedEncoder {
                model: EncoderModel::Bovw(cb),
                history: None,
                kmeans: Some(trace),
            })
        }
    }
}

pub fn embed_views(model: &EncoderModel, rep: &Representation, views: &[&RasterImage]) -> Result<Vec<Embedding>> {
    model.embed_many(&prepare_all(rep, views)?)
}

pub fn build_index(model: &EncoderModel, rep: &Representation, tiles: &[Tile]) -> Result<ReferenceIndex> {
    let views: Vec<&RasterImage> = tiles.iter().map(|t| &t.pixels).collect();
    let emb = embed_views(model, rep, &views)?;
    ReferenceIndex::build(tiles.iter().zip(emb).map(|(t, e)| (t.id, t.center, e)))
}

/// Localizes each view; failures stay attached to their frame.
pub fn localize_views(
    index: &ReferenceIndex,
    model: &EncoderModel,
    rep: &Representation,
    views: &[std::result::Result<RasterImage, String>],
    params: &LocalizeParams,
) -> Vec<FrameOutcome> {
    views
        .par_iter()
        .map(|v| {
            let img = v.as_ref().map_err(Clone::clone)?;
            let input = rep.prepare(img).map_err(|e| e.to_string())?;
            let q = model.embed(&input).map_err(|e| e.to_string())?;
            index.localize(&q, params).map_err(|e| e.to_string())
        })
        .collect()
}

/// Synthetic localization benchmark: a reference area tiled from the
/// year-one terrain and a trajectory flown over the season-shifted year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub terrain: TerrainSpec,
    pub preset: TrajectoryPreset,
    pub tile_size: usize,
    pub season: SeasonShift,
    pub trajectory_seed: u64,
}

impl ScenarioSpec {
    pub fn grid(&self) -> TileGridSpec {
        TileGridSpec {
            tile_size: self.tile_size,
            overlap_fraction: self.preset.overlap_fraction,
        }
    }

    /// Ground footprint of a view in meters.
    pub fn footprint(&self) -> f64 {
        self.tile_size as f64 * self.terrain.resolution
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub terrain: Terrain,
    pub year2: RasterImage,
    /// Reference-area crop of the year-one raster.
    pub reference: RasterImage,
    pub reference_geo: GeoTransform,
    pub tiles: Vec<Tile>,
    /// Same grid cut from the year-two raster.
    pub tiles_year2: Vec<Tile>,
    pub poses: Vec<Pose>,
}

impl Scenario {
    /// Generates terrain, centers the path on it, and tiles the band the
    /// path may wander in plus room for a rotated view.
    pub fn build(spec: &ScenarioSpec) -> Result<Self> {
        let terrain = generate_terrain(&spec.terrain)?;
        let year2 = terrain.season_shift(&spec.season);
        let geo = terrain.geo;
        let res = geo.resolution;
        let footprint = spec.footprint();
        let (w_m, h_m) = (terrain.width() as f64 * res, terrain.height() as f64 * res);
        let start = WorldCoord::new(
            geo.origin_easting + (w_m - spec.preset.distance) / 2.0,
            geo.origin_northing - h_m / 2.0,
        );
        let poses = sample_trajectory(&spec.preset, start, footprint, spec.trajectory_seed)?;

        // tiles whose footprint may overlap any view; rotation adds up to √2/2 of the side
        let margin = footprint * std::f64::consts::FRAC_1_SQRT_2;
        let half_band = spec.preset.band_width / 2.0;
        let lo = geo.world_to_pixel(WorldCoord::new(start.easting - margin, start.northing + half_band + margin));
        let hi = geo.world_to_pixel(WorldCoord::new(
            start.easting + spec.preset.distance + margin,
            start.northing - half_band - margin,
        ));
        let clamp = |v: f64, max: usize| (v.max(0.0) as usize).min(max);
        let (x0, y0) = (clamp(lo.x.floor(), terrain.width()), clamp(lo.y.floor(), terrain.height()));
        let (x1, y1) = (clamp(hi.x.ceil(), terrain.width()), clamp(hi.y.ceil(), terrain.height()));
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidArgument("trajectory does not fit on the terrain".into()));
        }
        let reference = terrain.image.crop(x0, y0, x1 - x0, y1 - y0)?;
        let reference_geo = geo.shifted(x0, y0);
        let grid = spec.grid();
        let tiles = generate_tiles(&reference, &reference_geo, &grid)?;
        let tiles_year2 = generate_tiles(&year2.crop(x0, y0, x1 - x0, y1 - y0)?, &reference_geo, &grid)?;
        Ok(Self {
            spec: spec.clone(),
            terrain,
            year2,
            reference,
            reference_geo,
            tiles,
            tiles_year2,
            poses,
        })
    }

    pub fn tiling_info(&self) -> TilingInfo {
        let grid = self.spec.grid();
        TilingInfo {
            grid,
            stride: grid.stride(),
            geo: self.reference_geo,
            count: self.tiles.len(),
        }
    }

    pub fn truth(&self) -> Vec<WorldCoord> {
        self.poses.iter().map(Pose::position).collect()
    }

    /// Year-two views along the trajectory; out-of-bounds frames carry the
    /// error text.
    pub fn render_views(&self, pert: &PerturbationSpec) -> Vec<std::result::Result<RasterImage, String>> {
        self.poses
            .par_iter()
            .map(|p| render_view(&self.year2, &self.terrain.geo, p, self.spec.tile_size, pert).map_err(|e| e.to_string()))
            .collect()
    }

    /// Pixel coordinate of a pose on the full terrain.
    pub fn pose_pixel(&self, pose: &Pose) -> PixelCoord {
        self.terrain.geo.world_to_pixel(pose.position())
    }
}

/// A trained encoder with its reference index.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub representation: Representation,
    pub model: EncoderModel,
    pub index: ReferenceIndex,
}

impl Localizer {
    pub fn train(scenario: &Scenario, spec: &EncoderSpec) -> Result<(Self, TrainedEncoder)> {
        let views: Vec<&RasterImage> = scenario.tiles.iter().map(|t| &t.pixels).collect();
        let alt: Vec<&RasterImage> = scenario.tiles_year2.iter().map(|t| &t.pixels).collect();
        let trained = train_encoder(spec, &views, (spec.backend == Backend::Triplet).then_some(&alt[..]))?;
        let index = build_index(&trained.model, &spec.representation, &scenario.tiles)?;
        Ok((
            Self {
                representation: spec.representation,
                model: trained.model.clone(),
                index,
            },
            trained,
        ))
    }

    pub fn evaluate(&self, scenario: &Scenario, pert: &PerturbationSpec, params: &LocalizeParams, radius: f64, gated: bool) -> Result<EvalReport> {
        let views = scenario.render_views(pert);
        let outcomes = localize_views(&self.index, &self.model, &self.representation, &views, params);
        report_from_outcomes(&outcomes, &scenario.truth(), radius, gated)
    }

    /// Ungated and gated reports from one localization pass.
    pub fn evaluate_both(&self, scenario: &Scenario, pert: &PerturbationSpec, params: &LocalizeParams, radius: f64) -> Result<(EvalReport, EvalReport)> {
        let views = scenario.render_views(pert);
        let outcomes = localize_views(&self.index, &self.model, &self.representation, &views, params);
        let truth = scenario.truth();
        Ok((
            report_from_outcomes(&outcomes, &truth, radius, false)?,
            report_from_outcomes(&outcomes, &truth, radius, true)?,
        ))
    }
}
