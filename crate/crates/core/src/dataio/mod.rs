//! Synthetic video generation with exact ground-truth flow, flow corruption,
//! frame-pair sampling, and every on-disk format (flo, tensor container,
//! images, dataset layout).

mod dataset;
mod flo;
mod flow;
mod image;
mod sampling;
mod scene;
mod tensor;

pub use dataset::{list_sequences, load_sequence, write_dataset, write_sequence};
pub use flo::{read_flo, write_flo};
pub use flow::{corrupt_flow, CorruptionConfig, FlowField};
pub use image::{read_pgm, read_ppm, write_pgm, write_ppm_f32, ImageF32, LabelGrid};
pub use sampling::{sample_frame_pair, PairMode};
pub use scene::{
    generate_sequence, oracle_flow, point_flow, visible_id_at, Scene, SceneConfig, Sprite,
    SpriteShape, Texture, VideoSample, Wave,
};
pub use tensor::{read_fltf, write_fltf};

use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("out of range: {0}")]
    OutOfRange(String),
    #[error("bad magic in {path}: {detail}")]
    BadMagic { path: PathBuf, detail: String },
    #[error("unsupported version {version} in {path}")]
    VersionUnsupported { path: PathBuf, version: u32 },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("invalid header in {path}: {reason}")]
    InvalidHeader { path: PathBuf, reason: String },
    #[error("non-finite data in {0}")]
    NonFiniteData(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
