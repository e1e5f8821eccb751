//! Embedding backends: reconstruction autoencoder, triplet-trained encoder
//! and bag of visual words, behind one [`EncoderModel`] front.

pub mod autoencoder;
pub mod bovw;
pub mod io;
pub mod optim;
pub mod triplet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::edgemap::{canny, CannyParams, EdgeMap};
use crate::error::{Error, Result};
use crate::raster::RasterImage;

pub use autoencoder::{train_autoencoder, AutoencoderModel, OutputActivation};
pub use bovw::{dense_descriptors, fit_codebook, kmeans, BovwCodebook, DescriptorSpec, KMeansTrace};
pub use optim::{TrainConfig, TrainHistory};
pub use triplet::{hardest_negatives, mine_hard_negatives, train_triplet, triplet_loss, TripletData, TripletModel, TripletShape};

/// Unit-norm embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f32>);

impl Embedding {
    /// L2-normalizes `raw`. Fails on non-finite or all-zero input.
    pub fn normalized(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding".into()));
        }
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("zero embedding cannot be normalized".into()));
        }
        Ok(Self(raw.iter().map(|v| (v / norm) as f32).collect()))
    }

    /// Wraps already-normalized values without re-scaling.
    pub fn from_unit(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &[f32]) -> f64 {
        self.0.iter().zip(other).map(|(&a, &b)| a as f64 * b as f64).sum()
    }
}

/// How a view is turned into encoder input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Representation {
    Gray,
    Canny { params: CannyParams },
    /// The view already is a binary edge map produced elsewhere.
    Imported,
}

impl Representation {
    pub fn canny_default() -> Self {
        Representation::Canny {
            params: CannyParams::default(),
        }
    }

    pub fn is_binary(&self) -> bool {
        !matches!(self, Representation::Gray)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Representation::Gray => "gray",
            Representation::Canny { .. } => "canny",
            Representation::Imported => "import",
        }
    }

    pub fn prepare(&self, img: &RasterImage) -> Result<ModelInput> {
        let values = match self {
            Representation::Gray => img.to_unit(),
            Representation::Canny { params } => canny(img, params)?.to_unit(),
            Representation::Imported => EdgeMap::from_raster(img).to_unit(),
        };
        Ok(ModelInput {
            width: img.width(),
            height: img.height(),
            values,
        })
    }
}

/// A flattened view scaled to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl ModelInput {
    pub fn from_edges(e: &EdgeMap) -> Self {
        Self {
            width: e.width(),
            height: e.height(),
            values: e.to_unit(),
        }
    }
}

/// Stacks inputs into a row-per-view matrix.
pub fn stack_inputs(inputs: &[ModelInput]) -> Result<Array2<f64>> {
    let n = inputs.first().map_or(0, |i| i.values.len());
    let mut out = Array2::zeros((inputs.len(), n));
    for (mut row, inp) in out.outer_iter_mut().zip(inputs) {
        if inp.values.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: inp.values.len(),
            });
        }
        row.assign(&ndarray::ArrayView1::from(&inp.values[..]));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[serde(rename = "ae")]
    Autoencoder,
    Triplet,
    Bovw,
}

impl Backend {
    pub fn tag(self) -> u8 {
        match self {
            Backend::Autoencoder => 1,
            Backend::Triplet => 2,
            Backend::Bovw => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderModel {
    Autoencoder(AutoencoderModel),
    Triplet(TripletModel),
    Bovw(BovwCodebook),
}

const EMBED_CHUNK: usize = 256;

impl EncoderModel {
    pub fn backend(&self) -> Backend {
        match self {
            EncoderModel::Autoencoder(_) => Backend::Autoencoder,
            EncoderModel::Triplet(_) => Backend::Triplet,
            EncoderModel::Bovw(_) => Backend::Bovw,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            EncoderModel::Autoencoder(m) => m.dim(),
            EncoderModel::Triplet(m) => m.dim(),
            EncoderModel::Bovw(c) => c.k(),
        }
    }

    /// Fixed input size, if the backend has one.
    pub fn input_size(&self) -> Option<(usize, usize)> {
        match self {
            EncoderModel::Autoencoder(m) => Some((m.width, m.height)),
            EncoderModel::Triplet(m) => Some((m.width, m.height)),
            EncoderModel::Bovw(_) => None,
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<()> {
        if let Some((w, h)) = self.input_size() {
            if input.width * input.height != w * h || input.values.len() != w * h {
                return Err(Error::DimensionMismatch {
                    expected: w * h,
                    got: input.values.len(),
                });
            }
        }
        Ok(())
    }

    pub fn embed(&self, input: &ModelInput) -> Result<Embedding> {
        Ok(self.embed_many(std::slice::from_ref(input))?.remove(0))
    }

    /// Embeds every input. Row results do not depend on how inputs are
    /// grouped, so this matches calling [`EncoderModel::embed`] one by one.
    pub fn embed_many(&self, inputs: &[ModelInput]) -> Result<Vec<Embedding>> {
        for inp in inputs {
            self.check_input(inp)?;
        }
        let mut out = Vec::with_capacity(inputs.len());
        match self {
            EncoderModel::Autoencoder(m) => {
                for chunk in inputs.chunks(EMBED_CHUNK) {
                    let x = stack_inputs(chunk)?;
                    let z = m.encode(&x.view());
                    for row in z.outer_iter() {
                        out.push(Embedding::normalized(row.as_slice().expect("standard layout"))?);
                    }
                }
            }
            EncoderModel::Triplet(m) => {
                for chunk in inputs.chunks(EMBED_CHUNK) {
                    let x = stack_inputs(chunk)?;
                    let y = m.embed_batch(&x.view())?;
                    for row in y.outer_iter() {
                        out.push(Embedding::normalized(row.as_slice().expect("standard layout"))?);
                    }
                }
            }
            EncoderModel::Bovw(cb) => {
                for inp in inputs {
                    out.push(Embedding::normalized(&cb.embed(inp.width, inp.height, &inp.values)?)?);
                }
            }
        }
        Ok(out)
    }
}

/// Embeds a single view (convenience over [`EncoderModel::embed`]).
pub fn embed(view: &ModelInput, model: &EncoderModel) -> Result<Embedding> {
    model.embed(view)
}
