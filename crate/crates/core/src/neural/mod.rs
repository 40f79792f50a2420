//! Feed-forward, GRU and multimodal (MMDL) networks with hand-written
//! reverse-mode gradients. All arithmetic is `f64`.

pub mod data;
pub mod layers;
pub mod network;
pub mod train;

use std::path::Path;

pub use data::{predict_mmdl, EpisodeScaler};
pub use layers::{Activation, Dense, GruCell, Params};
pub use network::{gradient_check, Architecture, GradCheck, NetConfig, NetInput, Network, OutputKind};
pub use train::{train, EpochRecord, TrainConfig, TrainHistory};

use crate::container::{self, ContainerError};
use crate::features::FeatureError;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ICBN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("validation split is empty")]
    EmptyValidation,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// A trained network together with the scaling it expects.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub network: Network,
    pub scaler: Option<EpisodeScaler>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, NeuralError> {
        Ok(container::to_bytes(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, self)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NeuralError> {
        Ok(container::from_bytes(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), NeuralError> {
        std::fs::write(path, self.to_bytes()?).map_err(ContainerError::from)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NeuralError> {
        Self::from_bytes(&std::fs::read(path).map_err(ContainerError::from)?)
    }
}
