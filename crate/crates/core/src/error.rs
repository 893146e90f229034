use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::DatasetError;
use crate::gait::GaitError;
use crate::nn::checkpoint::CheckpointError;
use crate::nn::NnError;
use crate::sensor::SensorError;
use crate::textures::TextureError;
use crate::wire::WireError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Texture(#[from] TextureError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Texture(_) => "texture",
            Error::Sensor(_) => "sensor",
            Error::Dataset(_) => "dataset",
            Error::Nn(_) => "model",
            Error::Checkpoint(_) => "checkpoint",
            Error::Gait(_) => "gait",
            Error::Wire(_) => "wire",
            Error::Io { .. } => "io",
            Error::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
