//! Visual localization of aerial views against a georeferenced reference
//! mosaic, using edge-map or intensity embeddings.

mod binio;
pub mod cli;
pub mod edgemap;
pub mod evaluate;
pub mod encoder;
pub mod error;
pub mod geotile;
pub mod index;
pub mod pipeline;
pub mod raster;
pub mod simulator;

pub use binio::sha256_hex;
pub use error::{Error, Result};
