//! Parsers, writers and binary persistence for every on-disk artifact.
//!
//! * plain-text XYZ point clouds (`x y z intensity return_number num_returns`)
//! * ESRI ASCII Grid rasters
//! * the `LCZM` little-endian tensor container used for stacks and weights
//! * the scene manifest CSV (`scene_id,raster_path,temperature_kelvin`)
//!
//! Every parser takes untrusted input and reports structured errors; none of
//! them panic on malformed bytes.

mod ascii_grid;
mod lczm;
mod manifest;
mod points;

pub use ascii_grid::{export_ascii_grid, import_ascii_grid, Raster2D};
pub use lczm::{
    decode_tensors, encode_tensors, load_model, save_model, NamedTensor, TensorSet, LCZM_MAGIC,
    LCZM_VERSION,
};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, SceneManifest};
pub use points::{parse_point_cloud, write_point_cloud, PointCloud, PointRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("missing tensor `{0}`")]
    MissingTensor(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IoError {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse {
            line,
            message: message.into(),
        }
    }
}
