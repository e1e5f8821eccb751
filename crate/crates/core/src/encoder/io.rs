//! Model container: magic `ELMD`, u32 format version, u8 backend tag, a
//! backend-specific dimension header, then f32 parameter blocks, all
//! little-endian. A JSON sidecar (`<model>.json`) carries the training
//! configuration and loss history.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{AutoencoderModel, Backend, BovwCodebook, DescriptorSpec, EncoderModel, KMeansTrace, OutputActivation, Representation, TrainConfig, TrainHistory, TripletModel};
use crate::binio::{sha256_hex, Reader, Writer};
use crate::error::{Error, Result};
use crate::geotile::TilingInfo;

pub const MODEL_MAGIC: [u8; 4] = *b"ELMD";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub format_version: u32,
    pub backend: Backend,
    pub representation: Representation,
    /// Hash of the resolved configuration that produced the model.
    pub config_hash: String,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
    #[serde(default)]
    pub history: Option<TrainHistory>,
    #[serde(default)]
    pub kmeans: Option<KMeansTrace>,
    #[serde(default)]
    pub tiling: Option<TilingInfo>,
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{what} {v} exceeds u32")))
}

pub fn encode_model(model: &EncoderModel) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&MODEL_MAGIC);
    w.u32(MODEL_FORMAT_VERSION);
    w.u8(model.backend().tag());
    match model {
        EncoderModel::Autoencoder(m) => {
            w.u32(u32_of(m.width, "width")?);
            w.u32(u32_of(m.height, "height")?);
            w.u32(u32_of(m.dim(), "dim")?);
            w.u8(match m.output {
                OutputActivation::Linear => 0,
                OutputActivation::Logistic => 1,
            });
            w.f32_block(m.encode_weights.iter());
            w.f32_block(m.encode_bias.iter());
            w.f32_block(m.decode_weights.iter());
            w.f32_block(m.decode_bias.iter());
        }
        EncoderModel::Triplet(m) => {
            w.u32(u32_of(m.width, "width")?);
            w.u32(u32_of(m.height, "height")?);
            w.u32(u32_of(m.hidden(), "hidden")?);
            w.u32(u32_of(m.dim(), "dim")?);
            w.f32(m.alpha as f32);
            w.f32_block(m.hidden_weights.iter());
            w.f32_block(m.hidden_bias.iter());
            w.f32_block(m.output_weights.iter());
            w.f32_block(m.output_bias.iter());
        }
        EncoderModel::Bovw(c) => {
            w.u32(u32_of(c.descriptor.patch, "patch")?);
            w.u32(u32_of(c.descriptor.stride, "stride")?);
            w.u32(u32_of(c.k(), "k")?);
            w.u32(u32_of(c.centroids.ncols(), "descriptor dim")?);
            w.f32_block(c.centroids.iter());
        }
    }
    Ok(w.buf)
}

pub fn decode_model(bytes: &[u8]) -> Result<EncoderModel> {
    let mut r = Reader::new(bytes, "model");
    r.expect_magic(MODEL_MAGIC)?;
    r.expect_version(MODEL_FORMAT_VERSION)?;
    let tag = r.u8()?;
    let matrix = |r: &mut Reader, rows: usize, cols: usize| -> Result<Array2<f64>> {
        Ok(Array2::from_shape_vec((rows, cols), r.f32_block(rows * cols)?).expect("sized block"))
    };
    let vector = |r: &mut Reader, n: usize| -> Result<Array1<f64>> { Ok(Array1::from(r.f32_block(n)?)) };
    let model = match tag {
        1 => {
            let width = r.u32()? as usize;
            let height = r.u32()? as usize;
            let d = r.u32()? as usize;
            let output = match r.u8()? {
                0 => OutputActivation::Linear,
                1 => OutputActivation::Logistic,
                o => return Err(Error::InvalidArgument(format!("unknown output activation {o}"))),
            };
            let n = width * height;
            EncoderModel::Autoencoder(AutoencoderModel {
                width,
                height,
                encode_weights: matrix(&mut r, d, n)?,
                encode_bias: vector(&mut r, d)?,
                decode_weights: matrix(&mut r, n, d)?,
                decode_bias: vector(&mut r, n)?,
                output,
            })
        }
        2 => {
            let width = r.u32()? as usize;
            let height = r.u32()? as usize;
            let h = r.u32()? as usize;
            let d = r.u32()? as usize;
            let alpha = r.f32()? as f64;
            let n = width * height;
            EncoderModel::Triplet(TripletModel {
                width,
                height,
                hidden_weights: matrix(&mut r, h, n)?,
                hidden_bias: vector(&mut r, h)?,
                output_weights: matrix(&mut r, d, h)?,
                output_bias: vector(&mut r, d)?,
                alpha,
            })
        }
        3 => {
            let patch = r.u32()? as usize;
            let stride = r.u32()? as usize;
            let k = r.u32()? as usize;
            let dim = r.u32()? as usize;
            EncoderModel::Bovw(BovwCodebook {
                centroids: matrix(&mut r, k, dim)?,
                descriptor: DescriptorSpec { patch, stride },
            })
        }
        t => return Err(Error::InvalidArgument(format!("unknown backend tag {t}"))),
    };
    r.finish()?;
    Ok(model)
}

/// Writes the binary model and its JSON sidecar. Returns the model hash.
pub fn write_model(path: impl AsRef<Path>, model: &EncoderModel, meta: &ModelMeta) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode_model(model)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a model, its sidecar, and the hash of the binary file.
pub fn read_model(path: impl AsRef<Path>) -> Result<(EncoderModel, ModelMeta, String)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = decode_model(&bytes)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: ModelMeta = serde_json::from_str(&text)?;
    if meta.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            what: "model sidecar",
            found: meta.format_version,
            expected: MODEL_FORMAT_VERSION,
        });
    }
    if meta.backend != model.backend() {
        return Err(Error::ConfigMismatch("model sidecar backend differs from model file".into()));
    }
    Ok((model, meta, sha256_hex(&bytes)))
}
