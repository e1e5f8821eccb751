//! Reference embedding index: exact dot-product search, position estimates
//! and the top-two ratio confidence gate.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{sha256_hex, Reader, Writer};
use crate::encoder::{Embedding, Representation};
use crate::error::{Error, Result};
use crate::geotile::{TilingInfo, WorldCoord};

pub const DEFAULT_GATE: f64 = 1.13;
pub const DEFAULT_TOP_K: usize = 16;
pub const INDEX_MAGIC: [u8; 4] = *b"ELIX";
pub const INDEX_FORMAT_VERSION: u32 = 1;

const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceIndex {
    dim: usize,
    /// m × dim, row-major
    embeddings: Vec<f32>,
    positions: Vec<WorldCoord>,
    ids: Vec<u32>,
}

/// One search hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub id: u32,
    pub score: f64,
    #[serde(skip)]
    pub row: usize,
}

fn rank(a: &Match, b: &Match) -> Ordering {
    b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal).then(a.id.cmp(&b.id))
}

impl ReferenceIndex {
    pub fn from_parts(dim: usize, embeddings: Vec<f32>, positions: Vec<WorldCoord>, ids: Vec<u32>) -> Result<Self> {
        let m = ids.len();
        if positions.len() != m {
            return Err(Error::LengthMismatch { left: positions.len(), right: m });
        }
        if embeddings.len() != m * dim {
            return Err(Error::DimensionMismatch { expected: m * dim, got: embeddings.len() });
        }
        if dim > 0 {
            for (i, row) in embeddings.chunks(dim).enumerate() {
                let n = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
                if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::InvalidArgument(format!("index row {i} has norm {n}")));
                }
            }
        }
        Ok(Self { dim, embeddings, positions, ids })
    }

    /// Builds an index from `(id, world position, embedding)` entries, kept in
    /// the given order.
    pub fn build(entries: impl IntoIterator<Item = (u32, WorldCoord, Embedding)>) -> Result<Self> {
        let mut dim = None;
        let (mut embeddings, mut positions, mut ids) = (Vec::new(), Vec::new(), Vec::new());
        for (id, pos, e) in entries {
            let d = *dim.get_or_insert(e.dim());
            if e.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, got: e.dim() });
            }
            embeddings.extend_from_slice(e.values());
            positions.push(pos);
            ids.push(id);
        }
        Self::from_parts(dim.unwrap_or(0), embeddings, positions, ids)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn positions(&self) -> &[WorldCoord] {
        &self.positions
    }

    pub fn embedding(&self, row: usize) -> &[f32] {
        &self.embeddings[row * self.dim..(row + 1) * self.dim]
    }

    pub fn position_of(&self, id: u32) -> Option<WorldCoord> {
        self.ids.iter().position(|&i| i == id).map(|r| self.positions[r])
    }

    fn check_query(&self, q: &Embedding) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: q.dim() });
        }
        Ok(())
    }

    /// Dot product of the query with every row, in row order.
    pub fn scores(&self, q: &Embedding) -> Result<Vec<f64>> {
        self.check_query(q)?;
        Ok(self.embeddings.par_chunks(self.dim).map(|row| q.dot(row)).collect())
    }

    /// Best `k` rows by score, descending, ties by ascending id. `k` is
    /// clamped to the index size.
    pub fn query_topk(&self, q: &Embedding, k: usize) -> Result<Vec<Match>> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let scores = self.scores(q)?;
        let mut all: Vec<Match> = scores
            .into_iter()
            .enumerate()
            .map(|(row, score)| Match { id: self.ids[row], score, row })
            .collect();
        let k = k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, rank);
            all.truncate(k);
        }
        all.sort_by(rank);
        Ok(all)
    }

    pub fn localize(&self, q: &Embedding, params: &LocalizeParams) -> Result<LocalizationResult> {
        let top = self.query_topk(q, params.top_k.max(2))?;
        let scores: Vec<f64> = top.iter().map(|m| m.score).collect();
        let ratio = lowe_ratio(&scores)?;
        let best = top[0];
        let mut fallback = false;
        let predicted = match params.estimator {
            Estimator::Argmax => self.positions[best.row],
            Estimator::Weighted => {
                let used = &top[..params.top_k.max(1).min(top.len())];
                let total: f64 = used.iter().map(|m| m.score.max(0.0)).sum();
                if total > 0.0 {
                    let (mut e, mut n) = (0.0, 0.0);
                    for m in used {
                        let w = m.score.max(0.0) / total;
                        e += w * self.positions[m.row].easting;
                        n += w * self.positions[m.row].northing;
                    }
                    WorldCoord::new(e, n)
                } else {
                    fallback = true;
                    self.positions[best.row]
                }
            }
        };
        Ok(LocalizationResult {
            predicted,
            best_id: best.id,
            top_score: best.score,
            lowe_ratio: ratio,
            accepted: ratio >= params.threshold,
            estimator: params.estimator,
            fallback,
        })
    }
}

/// Top score over runner-up. Infinite when there is no runner-up or it is
/// not positive.
pub fn lowe_ratio(scores: &[f64]) -> Result<f64> {
    match scores {
        [] => Err(Error::EmptyScores),
        [_] => Ok(f64::INFINITY),
        [first, second, ..] => Ok(if *second <= 0.0 { f64::INFINITY } else { first / second }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    #[default]
    Argmax,
    Weighted,
}

impl std::str::FromStr for Estimator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(Estimator::Argmax),
            "weighted" => Ok(Estimator::Weighted),
            _ => Err(Error::InvalidArgument(format!("unknown estimator {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizeParams {
    pub threshold: f64,
    pub estimator: Estimator,
    pub top_k: usize,
}

impl Default for LocalizeParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_GATE,
            estimator: Estimator::Argmax,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub predicted: WorldCoord,
    pub best_id: u32,
    pub top_score: f64,
    #[serde(with = "ratio_serde")]
    pub lowe_ratio: f64,
    pub accepted: bool,
    pub estimator: Estimator,
    /// Weighted estimate had no positive weights and used the best tile.
    pub fallback: bool,
}

/// JSON has no infinity; an unbounded ratio is written as `null`.
pub(crate) mod ratio_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub format_version: u32,
    /// SHA-256 of the model file whose embeddings fill the index.
    pub model_hash: String,
    /// Model path as given when the index was built.
    #[serde(default)]
    pub model_path: Option<String>,
    pub representation: Representation,
    #[serde(default)]
    pub tiling: Option<TilingInfo>,
    pub config_hash: String,
}

pub fn index_sidecar_path(index: &Path) -> PathBuf {
    let mut s = index.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn encode_index(idx: &ReferenceIndex) -> Result<Vec<u8>> {
    let too_big = |_| Error::InvalidArgument("index too large".into());
    let mut w = Writer::default();
    w.bytes(&INDEX_MAGIC);
    w.u32(INDEX_FORMAT_VERSION);
    w.u32(u32::try_from(idx.dim).map_err(too_big)?);
    w.u32(u32::try_from(idx.len()).map_err(too_big)?);
    for &v in &idx.embeddings {
        w.f32(v);
    }
    for p in &idx.positions {
        w.f64(p.easting);
        w.f64(p.northing);
    }
    for &id in &idx.ids {
        w.u32(id);
    }
    Ok(w.buf)
}

pub fn decode_index(bytes: &[u8]) -> Result<ReferenceIndex> {
    let mut r = Reader::new(bytes, "index");
    r.expect_magic(INDEX_MAGIC)?;
    r.expect_version(INDEX_FORMAT_VERSION)?;
    let d = r.u32()? as usize;
    let m = r.u32()? as usize;
    let embeddings = (0..m * d).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let positions = (0..m)
        .map(|_| Ok(WorldCoord::new(r.f64()?, r.f64()?)))
        .collect::<Result<Vec<_>>>()?;
    let ids = (0..m).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    ReferenceIndex::from_parts(d, embeddings, positions, ids)
}

/// Writes the index and its sidecar. Returns the index file hash.
pub fn write_index(path: impl AsRef<Path>, idx: &ReferenceIndex, meta: &IndexMeta) -> Result<String> {
    let path = path.as_ref();
    let bytes = encode_index(idx)?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let side = index_sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(meta)?).map_err(|e| Error::io(&side, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_index(path: impl AsRef<Path>) -> Result<(ReferenceIndex, IndexMeta)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let idx = decode_index(&bytes)?;
    let side = index_sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let meta: IndexMeta = serde_json::from_str(&text)?;
    if meta.format_version != INDEX_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            what: "index sidecar",
            found: meta.format_version,
            expected: INDEX_FORMAT_VERSION,
        });
    }
    Ok((idx, meta))
}
