//! On-disk formats: binary tensors, PPM images, memory directories and
//! retrieval directories. JSON manifests reference sibling files by
//! relative path.

mod memory_dir;
mod ppm;
mod retrieval_dir;
mod tensor;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use memory_dir::{read_memory, write_memory, MemoryManifest, PatchEntry};
pub use ppm::{decode_ppm, encode_ppm, read_ppm, write_ppm};
pub use retrieval_dir::{read_retrieval, write_retrieval, RetrievalManifest};
pub use tensor::{DType, Tensor, TensorData, MAGIC, VERSION};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("invalid content: {0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn at(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::at(path, e))?;
    serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| IoError::at(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(|e| IoError::at(path, e))
}
