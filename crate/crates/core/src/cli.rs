//! Command-line front end. `run` parses arguments, executes one subcommand
//! and returns the process exit code; errors are printed as a single line.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 missing file,
//! 4 unsupported format version, 5 configuration mismatch.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::edgemap::{canny, CannyParams};
use crate::encoder::io::{read_model, write_model, ModelMeta, MODEL_FORMAT_VERSION};
use crate::encoder::{Backend, EncoderModel, Representation};
use crate::error::{Error, Result};
use crate::evaluate::{
    compare_pipelines, parse_sweep_values, report_from_outcomes, run_sweep, sweep_svg, write_json, write_report, EvalReport, SweepAxis,
    DEFAULT_RADIUS,
};
use crate::geotile::{
    generate_tiles, read_georaster, read_tiling_info, read_tileset, world_file_path, write_georaster, write_tileset, GeoTransform, TileGridSpec,
    TilingInfo, WorldCoord,
};
use crate::index::{read_index, write_index, Estimator, IndexMeta, LocalizeParams, ReferenceIndex, DEFAULT_GATE, DEFAULT_TOP_K, INDEX_FORMAT_VERSION};
use crate::pipeline::{build_index, localize_views, train_encoder, EncoderSpec, Scenario, ScenarioSpec};
use crate::raster::RasterImage;
use crate::simulator::{render_view, PerturbationSpec, Pose, SeasonShift, TerrainSpec, TrajectoryPreset};
use crate::{sha256_hex, Error as CrateError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_MISSING_FILE: i32 = 3;
pub const EXIT_FORMAT_VERSION: i32 = 4;
pub const EXIT_CONFIG_MISMATCH: i32 = 5;

/// Environment variable consulted for the seed when neither a flag nor the
/// config file sets one.
pub const SEED_ENV: &str = "EDGELOC_SEED";

/// File name of the per-run manifest inside an output directory.
pub const RUN_MANIFEST: &str = "run.json";

const DESK_TILE: usize = 64;
const DESK_DIM: usize = 64;
const DESK_EPOCHS: usize = 50;
const FULL_TILE: usize = 256;
const FULL_DIM: usize = 1024;
const FULL_EPOCHS: usize = 200;

#[derive(Parser, Debug)]
#[command(name = "edgeloc", version, about = "Localize aerial views against geo-referenced reference tiles")]
struct Cli {
    /// Worker threads; results are identical for any value
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// TOML file supplying defaults for flags (flags win)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic terrain, its season-shifted twin, reference tiles and trajectory views
    Simulate(SimulateArgs),
    /// Compute the Canny edge map of one image
    Edges(EdgesArgs),
    /// Cut a geo-referenced raster into overlapping tiles
    Tile(TileArgs),
    /// Train an embedding backend on a tile set
    Train(TrainArgs),
    /// Embed a tile set into a reference index
    Index(IndexArgs),
    /// Localize a single view
    Localize(LocalizeArgs),
    /// Localize a directory of views and score them against ground truth
    Evaluate(EvaluateArgs),
    /// Re-render trajectory views under a range of perturbations and score each
    Sweep(SweepArgs),
    /// Paired comparison of two evaluation reports
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Trajectory preset A, B, C or D; scaled down to fit the terrain if needed
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Terrain width in pixels
    #[arg(long)]
    width: Option<usize>,
    /// Terrain height in pixels
    #[arg(long)]
    height: Option<usize>,
    /// Meters per pixel
    #[arg(long)]
    resolution: Option<f64>,
    /// Fields per square kilometer
    #[arg(long)]
    field_density: Option<f64>,
    #[arg(long)]
    roads_per_km: Option<f64>,
    /// Buildings per square kilometer
    #[arg(long)]
    building_density: Option<f64>,
    /// Pixel noise amplitude in gray levels
    #[arg(long)]
    noise: Option<u8>,
    /// View and tile side in pixels
    #[arg(long)]
    tile_size: Option<usize>,
    /// Share of fields repainted by the season shift
    #[arg(long)]
    change_fraction: Option<f64>,
    /// Use 256 px views and tiles
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args, Debug)]
struct CannyArgs {
    /// Weak hysteresis threshold
    #[arg(long)]
    low: Option<f64>,
    /// Strong hysteresis threshold
    #[arg(long)]
    high: Option<f64>,
    /// Sobel kernel size (3, 5 or 7)
    #[arg(long)]
    kernel: Option<usize>,
}

#[derive(Args, Debug)]
struct EdgesArgs {
    /// Input PGM or PNG
    #[arg(long)]
    input: PathBuf,
    /// Output PGM (edges 255, background 0)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    canny: CannyArgs,
}

#[derive(Args, Debug)]
struct TileArgs {
    /// Input raster with a world file next to it
    #[arg(long)]
    input: PathBuf,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tile_size: Option<usize>,
    /// Fraction of a tile shared with its neighbor
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// ae, triplet or bovw
    #[arg(long)]
    backend: String,
    /// gray, canny or import (tiles already are edge maps)
    #[arg(long)]
    input: String,
    /// Reference tile directory
    #[arg(long)]
    tiles: PathBuf,
    /// Same tiles under a second appearance (triplet only)
    #[arg(long)]
    tiles_alt: Option<PathBuf>,
    /// Output model file
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Embedding dimension (codebook size for bovw)
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[command(flatten)]
    canny: CannyArgs,
    /// Embedding dimension 1024 and 200 epochs
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args, Debug)]
struct IndexArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tiles: PathBuf,
    /// Output index file
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GateArgs {
    /// Lowe ratio a match needs to be accepted
    #[arg(long, alias = "threshold")]
    gate: Option<f64>,
    /// argmax or weighted
    #[arg(long)]
    estimator: Option<String>,
    /// Matches averaged by the weighted estimator
    #[arg(long)]
    top_k: Option<usize>,
}

#[derive(Args, Debug)]
struct LocalizeArgs {
    #[arg(long)]
    index: PathBuf,
    /// Model file; defaults to the one recorded when the index was built
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    view: PathBuf,
    #[command(flatten)]
    gate: GateArgs,
    /// Write the result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Directory of view_NNNNNN images
    #[arg(long)]
    views: PathBuf,
    /// truth.json written by `simulate`
    #[arg(long)]
    truth: PathBuf,
    /// Correctness radius in meters
    #[arg(long)]
    radius: Option<f64>,
    #[command(flatten)]
    gate: GateArgs,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// rotation or altitude
    #[arg(long)]
    axis: String,
    /// start:stop:step or a comma list; defaults to the whole axis range
    #[arg(long)]
    values: Option<String>,
    /// Directory written by `simulate`
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    radius: Option<f64>,
    #[command(flatten)]
    gate: GateArgs,
    /// Score only frames that pass the gate
    #[arg(long)]
    gated: bool,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// First report JSON
    #[arg(long)]
    a: PathBuf,
    /// Second report JSON
    #[arg(long)]
    b: PathBuf,
    /// Write the comparison here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Values a `--config` file may set. Keys are the long flag names with
/// underscores.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    preset: Option<String>,
    width: Option<usize>,
    height: Option<usize>,
    resolution: Option<f64>,
    field_density: Option<f64>,
    roads_per_km: Option<f64>,
    building_density: Option<f64>,
    noise: Option<u8>,
    tile_size: Option<usize>,
    overlap: Option<f64>,
    change_fraction: Option<f64>,
    dim: Option<usize>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    low: Option<f64>,
    high: Option<f64>,
    kernel: Option<usize>,
    gate: Option<f64>,
    estimator: Option<String>,
    top_k: Option<usize>,
    radius: Option<f64>,
    full_scale: Option<bool>,
}

impl FileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {}", path.display(), one_line(&e.to_string()))))
    }
}

/// One ground-truth position per trajectory frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub frame: usize,
    pub easting: f64,
    pub northing: f64,
}

pub const TRUTH_FILE: &str = "truth.json";
pub const POSES_FILE: &str = "poses.json";
pub const SCENARIO_FILE: &str = "scenario.json";
pub const YEAR1_RASTER: &str = "terrain_year1.pgm";
pub const YEAR2_RASTER: &str = "terrain_year2.pgm";
pub const REFERENCE_DIR: &str = "reference";
pub const REFERENCE_ALT_DIR: &str = "reference_year2";
pub const VIEWS_DIR: &str = "views";

pub fn view_file_name(frame: usize) -> String {
    format!("view_{frame:06}.pgm")
}

#[derive(Serialize)]
struct Formats {
    model: u32,
    index: u32,
}

/// Written next to every run's outputs. Holds no timestamps or absolute
/// machine state so reruns are byte-identical.
#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a C,
    config_hash: String,
    formats: Formats,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
}

fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn write_manifest<C: Serialize>(
    path: &Path,
    command: &'static str,
    config: &C,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
) -> Result<()> {
    let m = RunManifest {
        tool: "edgeloc",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        config_hash: config_hash(config)?,
        formats: Formats {
            model: MODEL_FORMAT_VERSION,
            index: INDEX_FORMAT_VERSION,
        },
        inputs,
        outputs,
    };
    write_json(path, &m)
}

/// Hashes of every file under `dir` except the run manifest, keyed by the
/// path relative to `dir` with `/` separators.
fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
                continue;
            }
            let rel = path.strip_prefix(root).expect("walk stays under root");
            let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            if key != RUN_MANIFEST {
                out.insert(key, hash_file(&path)?);
            }
        }
        Ok(())
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out)?;
    Ok(out)
}

fn file_manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}

fn display_name(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn exit_code(e: &CrateError) -> i32 {
    match e {
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_MISSING_FILE,
        Error::FormatVersion { .. } | Error::BadMagic { .. } => EXIT_FORMAT_VERSION,
        Error::ConfigMismatch(_) => EXIT_CONFIG_MISMATCH,
        Error::InvalidArgument(_) | Error::InvalidCannyParams(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn error_kind(code: i32) -> &'static str {
    match code {
        EXIT_USAGE => "usage",
        EXIT_MISSING_FILE => "missing-file",
        EXIT_FORMAT_VERSION => "format-version",
        EXIT_CONFIG_MISMATCH => "config-mismatch",
        _ => "failure",
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand { EXIT_USAGE } else { EXIT_OK };
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("edgeloc: error[usage]: {}", one_line(first));
            return EXIT_USAGE;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("edgeloc: error[{}]: {}", error_kind(code), one_line(&e.to_string()));
            code
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.threads {
        Some(0) => Err(Error::InvalidArgument("--threads must be positive".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(|| dispatch(cli.command, &cfg)),
        None => dispatch(cli.command, &cfg),
    }
}

fn dispatch(cmd: Command, cfg: &FileConfig) -> Result<()> {
    match cmd {
        Command::Simulate(a) => simulate(a, cfg),
        Command::Edges(a) => edges(a, cfg),
        Command::Tile(a) => tile(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Index(a) => index(a),
        Command::Localize(a) => localize(a, cfg),
        Command::Evaluate(a) => evaluate(a, cfg),
        Command::Sweep(a) => sweep(a, cfg),
        Command::Compare(a) => compare(a),
    }
}

/// Flag, then config file, then `EDGELOC_SEED`, then 0.
fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<u64> {
    if let Some(s) = flag.or(cfg.seed) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn resolve_canny(a: &CannyArgs, cfg: &FileConfig) -> Result<CannyParams> {
    let d = CannyParams::default();
    let p = CannyParams {
        low_threshold: a.low.or(cfg.low).unwrap_or(d.low_threshold),
        high_threshold: a.high.or(cfg.high).unwrap_or(d.high_threshold),
        sobel_kernel: a.kernel.or(cfg.kernel).unwrap_or(d.sobel_kernel),
        ..d
    };
    p.validate()?;
    Ok(p)
}

fn resolve_params(a: &GateArgs, cfg: &FileConfig) -> Result<LocalizeParams> {
    let estimator = match a.estimator.as_deref().or(cfg.estimator.as_deref()) {
        Some(s) => s.parse()?,
        None => Estimator::Argmax,
    };
    let threshold = a.gate.or(cfg.gate).unwrap_or(DEFAULT_GATE);
    if !(threshold >= 1.0) || !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("gate {threshold} must be a finite value >= 1")));
    }
    let top_k = a.top_k.or(cfg.top_k).unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        return Err(Error::InvalidArgument("top-k must be positive".into()));
    }
    Ok(LocalizeParams {
        threshold,
        estimator,
        top_k,
    })
}

fn resolve_radius(flag: Option<f64>, cfg: &FileConfig) -> Result<f64> {
    let r = flag.or(cfg.radius).unwrap_or(DEFAULT_RADIUS);
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!("radius {r} must be positive")));
    }
    Ok(r)
}

/// Shrinks the preset's path and band so the whole trajectory plus a view
/// margin fits on the terrain. Returns the preset unchanged when it fits.
pub fn fit_preset(preset: &TrajectoryPreset, terrain: &TerrainSpec, footprint: f64) -> Result<TrajectoryPreset> {
    let w = terrain.width as f64 * terrain.resolution - 2.0 * footprint;
    let h = terrain.height as f64 * terrain.resolution - 2.0 * footprint;
    if w <= 0.0 || h <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "terrain {}x{} px too small for {footprint} m views",
            terrain.width, terrain.height
        )));
    }
    let mut factor = 1.0f64;
    if preset.distance > w {
        factor = factor.min(w / preset.distance);
    }
    if preset.band_width > h {
        factor = factor.min(h / preset.band_width);
    }
    Ok(if factor < 1.0 { preset.scaled(factor) } else { preset.clone() })
}

#[derive(Serialize)]
struct SimulateConfig {
    scenario: ScenarioSpec,
    seed: u64,
    full_scale: bool,
}

fn simulate(a: SimulateArgs, cfg: &FileConfig) -> Result<()> {
    let seed = resolve_seed(a.seed, cfg)?;
    let full = a.full_scale || cfg.full_scale.unwrap_or(false);
    let d = TerrainSpec::default();
    let terrain = TerrainSpec {
        seed,
        width: a.width.or(cfg.width).unwrap_or(d.width),
        height: a.height.or(cfg.height).unwrap_or(d.height),
        resolution: a.resolution.or(cfg.resolution).unwrap_or(d.resolution),
        field_density: a.field_density.or(cfg.field_density).unwrap_or(d.field_density),
        roads_per_km: a.roads_per_km.or(cfg.roads_per_km).unwrap_or(d.roads_per_km),
        building_density: a.building_density.or(cfg.building_density).unwrap_or(d.building_density),
        noise: a.noise.or(cfg.noise).unwrap_or(d.noise),
        ..d
    };
    terrain.validate()?;
    let tile_size = a.tile_size.or(cfg.tile_size).unwrap_or(if full { FULL_TILE } else { DESK_TILE });
    let name = a.preset.as_deref().or(cfg.preset.as_deref()).unwrap_or("B");
    let preset = TrajectoryPreset::named(name).ok_or_else(|| Error::InvalidArgument(format!("unknown preset {name:?}")))?;
    let preset = fit_preset(&preset, &terrain, tile_size as f64 * terrain.resolution)?;
    let season = SeasonShift {
        change_fraction: a.change_fraction.or(cfg.change_fraction).unwrap_or(SeasonShift::new(0).change_fraction),
        ..SeasonShift::new(seed.wrapping_add(1000))
    };
    if !(0.0..=1.0).contains(&season.change_fraction) {
        return Err(Error::InvalidArgument(format!("change fraction {} outside [0, 1]", season.change_fraction)));
    }
    let spec = ScenarioSpec {
        terrain,
        preset,
        tile_size,
        season,
        trajectory_seed: seed.wrapping_add(2000),
    };
    let config = SimulateConfig {
        scenario: spec.clone(),
        seed,
        full_scale: full,
    };

    let sc = Scenario::build(&spec)?;
    let out = &a.out;
    create_dir(out)?;
    write_georaster(out.join(YEAR1_RASTER), &sc.terrain.image, &sc.terrain.geo)?;
    write_georaster(out.join(YEAR2_RASTER), &sc.year2, &sc.terrain.geo)?;
    let info = sc.tiling_info();
    write_tileset(out.join(REFERENCE_DIR), &sc.tiles, Some(&info))?;
    write_tileset(out.join(REFERENCE_ALT_DIR), &sc.tiles_year2, Some(&info))?;
    let views_dir = out.join(VIEWS_DIR);
    create_dir(&views_dir)?;
    for (i, v) in sc.render_views(&PerturbationSpec::default()).into_iter().enumerate() {
        let img = v.map_err(|e| Error::InvalidArgument(format!("frame {i}: {e}")))?;
        img.write_pgm(views_dir.join(view_file_name(i)))?;
    }
    write_json(out.join(POSES_FILE), &sc.poses)?;
    let truth: Vec<TruthEntry> = sc
        .poses
        .iter()
        .enumerate()
        .map(|(frame, p)| TruthEntry {
            frame,
            easting: p.easting,
            northing: p.northing,
        })
        .collect();
    write_json(out.join(TRUTH_FILE), &truth)?;
    write_json(out.join(SCENARIO_FILE), &spec)?;
    let outputs = hash_tree(out)?;
    write_manifest(&out.join(RUN_MANIFEST), "simulate", &config, BTreeMap::new(), outputs)?;
    println!(
        "simulated {} tiles, {} frames (preset {}, {:.0} m path) into {}",
        sc.tiles.len(),
        sc.poses.len(),
        spec.preset.name,
        spec.preset.distance,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct EdgesConfig {
    canny: CannyParams,
}

fn edges(a: EdgesArgs, cfg: &FileConfig) -> Result<()> {
    let params = resolve_canny(&a.canny, cfg)?;
    let img = RasterImage::read(&a.input)?;
    let map = canny(&img, &params)?;
    map.write_pgm(&a.out)?;
    let wld = world_file_path(&a.input);
    let mut outputs = BTreeMap::from([(display_name(&a.out), hash_file(&a.out)?)]);
    if wld.exists() {
        let geo = GeoTransform::read_world_file(&wld)?;
        let out_wld = world_file_path(&a.out);
        geo.write_world_file(&out_wld)?;
        outputs.insert(display_name(&out_wld), hash_file(&out_wld)?);
    }
    let inputs = BTreeMap::from([(display_name(&a.input), hash_file(&a.input)?)]);
    write_manifest(&file_manifest_path(&a.out), "edges", &EdgesConfig { canny: params }, inputs, outputs)?;
    println!("{} edge pixels ({:.4} of the image)", map.edge_count(), map.edge_fraction());
    Ok(())
}

#[derive(Serialize)]
struct TileConfig {
    grid: TileGridSpec,
}

fn tile(a: TileArgs, cfg: &FileConfig) -> Result<()> {
    let d = TileGridSpec::default();
    let grid = TileGridSpec {
        tile_size: a.tile_size.or(cfg.tile_size).unwrap_or(DESK_TILE),
        overlap_fraction: a.overlap.or(cfg.overlap).unwrap_or(d.overlap_fraction),
    };
    let (img, geo) = read_georaster(&a.input)?;
    let tiles = generate_tiles(&img, &geo, &grid)?;
    let info = TilingInfo {
        grid,
        stride: grid.stride(),
        geo,
        count: tiles.len(),
    };
    write_tileset(&a.out, &tiles, Some(&info))?;
    let inputs = BTreeMap::from([(display_name(&a.input), hash_file(&a.input)?)]);
    write_manifest(&a.out.join(RUN_MANIFEST), "tile", &TileConfig { grid }, inputs, hash_tree(&a.out)?)?;
    println!("{} tiles (stride {} px) into {}", tiles.len(), grid.stride(), a.out.display());
    Ok(())
}

fn parse_backend(s: &str) -> Result<Backend> {
    match s {
        "ae" => Ok(Backend::Autoencoder),
        "triplet" => Ok(Backend::Triplet),
        "bovw" => Ok(Backend::Bovw),
        _ => Err(Error::InvalidArgument(format!("unknown backend {s:?} (expected ae, triplet or bovw)"))),
    }
}

fn parse_representation(s: &str, canny: CannyParams) -> Result<Representation> {
    match s {
        "gray" => Ok(Representation::Gray),
        "canny" => Ok(Representation::Canny { params: canny }),
        "import" => Ok(Representation::Imported),
        _ => Err(Error::InvalidArgument(format!("unknown input {s:?} (expected gray, canny or import)"))),
    }
}

#[derive(Serialize)]
struct TrainRunConfig {
    encoder: EncoderSpec,
    full_scale: bool,
}

fn train(a: TrainArgs, cfg: &FileConfig) -> Result<()> {
    let full = a.full_scale || cfg.full_scale.unwrap_or(false);
    let backend = parse_backend(&a.backend)?;
    let rep = parse_representation(&a.input, resolve_canny(&a.canny, cfg)?)?;
    let dim = a.dim.or(cfg.dim).unwrap_or(if full { FULL_DIM } else { DESK_DIM });
    if dim == 0 {
        return Err(Error::InvalidArgument("dim must be positive".into()));
    }
    let mut spec = EncoderSpec::new(backend, rep, dim);
    spec.train.seed = resolve_seed(a.seed, cfg)?;
    spec.train.epochs = a.epochs.or(cfg.epochs).unwrap_or(if full { FULL_EPOCHS } else { DESK_EPOCHS });
    if let Some(b) = a.batch_size.or(cfg.batch_size) {
        spec.train.batch_size = b;
    }
    if let Some(lr) = a.learning_rate.or(cfg.learning_rate) {
        spec.train.learning_rate = lr;
    }
    spec.train.validate()?;
    if backend == Backend::Triplet && a.tiles_alt.is_none() {
        return Err(Error::InvalidArgument("the triplet backend needs --tiles-alt".into()));
    }

    let tiles = read_tileset(&a.tiles)?;
    let tiling = read_tiling_info(&a.tiles)?;
    let views: Vec<&RasterImage> = tiles.iter().map(|t| &t.pixels).collect();
    let alt_tiles = match (&a.tiles_alt, backend) {
        (Some(dir), Backend::Triplet) => Some(read_tileset(dir)?),
        _ => None,
    };
    let alt_views: Option<Vec<&RasterImage>> = alt_tiles.as_ref().map(|t| t.iter().map(|t| &t.pixels).collect());
    let trained = train_encoder(&spec, &views, alt_views.as_deref())?;

    let run_config = TrainRunConfig {
        encoder: spec.clone(),
        full_scale: full,
    };
    let chash = config_hash(&run_config)?;
    let meta = ModelMeta {
        format_version: MODEL_FORMAT_VERSION,
        backend,
        representation: rep,
        config_hash: chash,
        train_config: (backend != Backend::Bovw).then(|| spec.train.clone()),
        history: trained.history.clone(),
        kmeans: trained.kmeans.clone(),
        tiling,
    };
    let model_hash = write_model(&a.out, &trained.model, &meta)?;
    let side = crate::encoder::io::sidecar_path(&a.out);
    let mut inputs = BTreeMap::from([("tiles".to_string(), hash_file(&a.tiles.join(crate::geotile::MANIFEST_FILE))?)]);
    if let Some(dir) = a.tiles_alt.as_ref().filter(|_| backend == Backend::Triplet) {
        inputs.insert("tiles_alt".into(), hash_file(&dir.join(crate::geotile::MANIFEST_FILE))?);
    }
    let outputs = BTreeMap::from([
        (display_name(&a.out), model_hash.clone()),
        (display_name(&side), hash_file(&side)?),
    ]);
    write_manifest(&file_manifest_path(&a.out), "train", &run_config, inputs, outputs)?;
    let tail = match (&trained.history, &trained.kmeans) {
        (Some(h), _) => format!("final train loss {:.6}", h.train_loss.last().copied().unwrap_or(f64::NAN)),
        (None, Some(k)) => format!("k-means objective {:.6}", k.objective.last().copied().unwrap_or(f64::NAN)),
        _ => String::new(),
    };
    println!("trained {} on {} tiles, d={dim}: {tail}", a.backend, tiles.len());
    Ok(())
}

fn check_model_image(model: &EncoderModel, img: &RasterImage) -> Result<()> {
    if let Some((w, h)) = model.input_size() {
        if (img.width(), img.height()) != (w, h) {
            return Err(Error::ConfigMismatch(format!(
                "model expects {w}x{h} views, got {}x{}",
                img.width(),
                img.height()
            )));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct IndexRunConfig {
    model_hash: String,
    representation: Representation,
}

fn index(a: IndexArgs) -> Result<()> {
    let (model, mmeta, model_hash) = read_model(&a.model)?;
    let tiles = read_tileset(&a.tiles)?;
    if let Some(t) = tiles.first() {
        check_model_image(&model, &t.pixels)?;
    }
    let idx = build_index(&model, &mmeta.representation, &tiles)?;
    let run_config = IndexRunConfig {
        model_hash: model_hash.clone(),
        representation: mmeta.representation,
    };
    let meta = IndexMeta {
        format_version: INDEX_FORMAT_VERSION,
        model_hash,
        model_path: Some(a.model.to_string_lossy().into_owned()),
        representation: mmeta.representation,
        tiling: read_tiling_info(&a.tiles)?,
        config_hash: config_hash(&run_config)?,
    };
    let index_hash = write_index(&a.out, &idx, &meta)?;
    let side = crate::index::index_sidecar_path(&a.out);
    let inputs = BTreeMap::from([
        (display_name(&a.model), run_config.model_hash.clone()),
        ("tiles".to_string(), hash_file(&a.tiles.join(crate::geotile::MANIFEST_FILE))?),
    ]);
    let outputs = BTreeMap::from([(display_name(&a.out), index_hash), (display_name(&side), hash_file(&side)?)]);
    write_manifest(&file_manifest_path(&a.out), "index", &run_config, inputs, outputs)?;
    println!("indexed {} tiles, d={}", idx.len(), idx.dim());
    Ok(())
}

/// Loads an index with the model it was built from, refusing any other.
fn load_pair(index_path: &Path, model_path: Option<&Path>) -> Result<(ReferenceIndex, IndexMeta, EncoderModel, ModelMeta)> {
    let (idx, imeta) = read_index(index_path)?;
    let model_path = match model_path {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(
            imeta
                .model_path
                .clone()
                .ok_or_else(|| Error::InvalidArgument("index records no model path; pass --model".into()))?,
        ),
    };
    let (model, mmeta, hash) = read_model(&model_path)?;
    if hash != imeta.model_hash {
        return Err(Error::ConfigMismatch(format!(
            "model {} (sha256 {}) is not the model the index was built with ({})",
            model_path.display(),
            &hash[..12],
            &imeta.model_hash[..imeta.model_hash.len().min(12)]
        )));
    }
    if mmeta.representation != imeta.representation {
        return Err(Error::ConfigMismatch("model and index disagree on the input representation".into()));
    }
    if model.dim() != idx.dim() {
        return Err(Error::ConfigMismatch(format!("model dim {} vs index dim {}", model.dim(), idx.dim())));
    }
    Ok((idx, imeta, model, mmeta))
}

#[derive(Serialize)]
struct LocalizeRunConfig {
    params: LocalizeParams,
    model_hash: String,
}

fn localize(a: LocalizeArgs, cfg: &FileConfig) -> Result<()> {
    let params = resolve_params(&a.gate, cfg)?;
    let (idx, imeta, model, mmeta) = load_pair(&a.index, a.model.as_deref())?;
    let img = RasterImage::read(&a.view)?;
    check_model_image(&model, &img)?;
    let q = model.embed(&mmeta.representation.prepare(&img)?)?;
    let result = idx.localize(&q, &params)?;
    match &a.out {
        Some(out) => {
            write_json(out, &result)?;
            let run_config = LocalizeRunConfig {
                params,
                model_hash: imeta.model_hash.clone(),
            };
            let inputs = BTreeMap::from([
                (display_name(&a.index), hash_file(&a.index)?),
                (display_name(&a.view), hash_file(&a.view)?),
            ]);
            let outputs = BTreeMap::from([(display_name(out), hash_file(out)?)]);
            write_manifest(&file_manifest_path(out), "localize", &run_config, inputs, outputs)?;
        }
        None => println!("{}", serde_json::to_string(&result)?),
    }
    Ok(())
}

fn read_truth(path: &Path) -> Result<Vec<TruthEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[derive(Serialize)]
struct EvaluateRunConfig {
    params: LocalizeParams,
    radius: f64,
    model_hash: String,
}

#[derive(Serialize)]
struct EvalSummary {
    ungated_accuracy: f64,
    gated_accuracy: f64,
    retention: f64,
    n_frames: usize,
}

fn evaluate(a: EvaluateArgs, cfg: &FileConfig) -> Result<()> {
    let params = resolve_params(&a.gate, cfg)?;
    let radius = resolve_radius(a.radius, cfg)?;
    let (idx, imeta, model, mmeta) = load_pair(&a.index, Some(&a.model))?;
    let truth = read_truth(&a.truth)?;
    if truth.is_empty() {
        return Err(Error::InvalidArgument("truth file lists no frames".into()));
    }
    let views: Vec<std::result::Result<RasterImage, String>> = truth
        .iter()
        .map(|t| {
            let img = RasterImage::read(a.views.join(view_file_name(t.frame)))?;
            check_model_image(&model, &img)?;
            Ok(img)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .map(Ok)
        .collect();
    let positions: Vec<WorldCoord> = truth.iter().map(|t| WorldCoord::new(t.easting, t.northing)).collect();
    let outcomes = localize_views(&idx, &model, &mmeta.representation, &views, &params);
    let ungated = report_from_outcomes(&outcomes, &positions, radius, false)?;
    let gated = report_from_outcomes(&outcomes, &positions, radius, true)?;
    create_dir(&a.out)?;
    write_report(&a.out, "report_ungated", &ungated)?;
    write_report(&a.out, "report_gated", &gated)?;
    let summary = EvalSummary {
        ungated_accuracy: ungated.accuracy,
        gated_accuracy: gated.accuracy,
        retention: gated.retention,
        n_frames: ungated.n_frames,
    };
    write_json(a.out.join("summary.json"), &summary)?;
    let run_config = EvaluateRunConfig {
        params,
        radius,
        model_hash: imeta.model_hash,
    };
    let inputs = BTreeMap::from([
        (display_name(&a.index), hash_file(&a.index)?),
        (display_name(&a.truth), hash_file(&a.truth)?),
    ]);
    write_manifest(&a.out.join(RUN_MANIFEST), "evaluate", &run_config, inputs, hash_tree(&a.out)?)?;
    println!(
        "accuracy@{radius}m {:.4} ungated, {:.4} gated at retention {:.4} over {} frames",
        summary.ungated_accuracy, summary.gated_accuracy, summary.retention, summary.n_frames
    );
    Ok(())
}

#[derive(Serialize)]
struct SweepRunConfig {
    axis: SweepAxis,
    values: Vec<f64>,
    params: LocalizeParams,
    radius: f64,
    gated: bool,
    model_hash: String,
}

fn sweep(a: SweepArgs, cfg: &FileConfig) -> Result<()> {
    let axis: SweepAxis = a.axis.parse()?;
    let values = match &a.values {
        Some(v) => parse_sweep_values(v)?,
        None => {
            let (lo, hi) = axis.range();
            parse_sweep_values(&format!("{lo}:{hi}:{}", axis.default_step()))?
        }
    };
    axis.check_values(&values)?;
    let params = resolve_params(&a.gate, cfg)?;
    let radius = resolve_radius(a.radius, cfg)?;
    let (idx, imeta, model, mmeta) = load_pair(&a.index, Some(&a.model))?;
    let spec_path = a.scenario.join(SCENARIO_FILE);
    let spec: ScenarioSpec = serde_json::from_str(&fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?)?;
    let poses_path = a.scenario.join(POSES_FILE);
    let poses: Vec<Pose> = serde_json::from_str(&fs::read_to_string(&poses_path).map_err(|e| Error::io(&poses_path, e))?)?;
    let (year2, geo) = read_georaster(a.scenario.join(YEAR2_RASTER))?;
    if let Some((w, h)) = model.input_size() {
        if (w, h) != (spec.tile_size, spec.tile_size) {
            return Err(Error::ConfigMismatch(format!("model expects {w}x{h} views, scenario renders {}", spec.tile_size)));
        }
    }
    let truth: Vec<WorldCoord> = poses.iter().map(Pose::position).collect();
    let result = run_sweep(axis, &values, |pert| {
        use rayon::prelude::*;
        let views: Vec<_> = poses
            .par_iter()
            .map(|p| render_view(&year2, &geo, p, spec.tile_size, pert).map_err(|e| e.to_string()))
            .collect();
        let outcomes = localize_views(&idx, &model, &mmeta.representation, &views, &params);
        report_from_outcomes(&outcomes, &truth, radius, a.gated)
    })?;
    create_dir(&a.out)?;
    let stem = format!("sweep_{}", a.axis);
    write_json(a.out.join(format!("{stem}.json")), &result)?;
    let label = mmeta.representation.name();
    let svg_path = a.out.join(format!("{stem}.svg"));
    fs::write(&svg_path, sweep_svg(&[(label, &result)])).map_err(|e| Error::io(&svg_path, e))?;
    let mut table = String::from("value,accuracy,retention\n");
    for p in &result.points {
        table.push_str(&format!("{},{},{}\n", p.value, p.report.accuracy, p.report.retention));
    }
    let csv_path = a.out.join(format!("{stem}.csv"));
    fs::write(&csv_path, &table).map_err(|e| Error::io(&csv_path, e))?;
    let run_config = SweepRunConfig {
        axis,
        values,
        params,
        radius,
        gated: a.gated,
        model_hash: imeta.model_hash,
    };
    let inputs = BTreeMap::from([
        (display_name(&a.index), hash_file(&a.index)?),
        (YEAR2_RASTER.to_string(), hash_file(&a.scenario.join(YEAR2_RASTER))?),
        (POSES_FILE.to_string(), hash_file(&poses_path)?),
    ]);
    write_manifest(&a.out.join(RUN_MANIFEST), "sweep", &run_config, inputs, hash_tree(&a.out)?)?;
    print!("{table}");
    Ok(())
}

fn read_report(path: &Path) -> Result<EvalReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn compare(a: CompareArgs) -> Result<()> {
    let c = compare_pipelines(&read_report(&a.a)?, &read_report(&a.b)?)?;
    match &a.out {
        Some(out) => {
            write_json(out, &c)?;
            let inputs = BTreeMap::from([("a".to_string(), hash_file(&a.a)?), ("b".to_string(), hash_file(&a.b)?)]);
            let outputs = BTreeMap::from([(display_name(out), hash_file(out)?)]);
            write_manifest(&file_manifest_path(out), "compare", &serde_json::json!({}), inputs, outputs)?;
        }
        None => println!("{}", serde_json::to_string(&c)?),
    }
    Ok(())
}
