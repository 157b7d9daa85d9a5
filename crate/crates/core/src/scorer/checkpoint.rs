//! Model checkpoints: a JSON header beside a little-endian f32 parameter payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ScorerConfig, ScorerModel};
use super::train::{TrainConfig, Validation};
use crate::decide::ThresholdResult;
use crate::error::{Error, Result};
use crate::normalize::NormalizationStats;
use crate::raster::{sidecar_paths, write_atomic};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub f1: Option<ThresholdResult>,
    pub f2: Option<ThresholdResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dtype: String,
    pub param_count: usize,
    pub config: ScorerConfig,
    pub patch_size: usize,
    pub stats: NormalizationStats,
    pub thresholds: Thresholds,
    #[serde(default)]
    pub validation: Option<Validation>,
    #[serde(default)]
    pub best_epoch: Option<usize>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: ScorerModel,
}

impl Checkpoint {
    pub fn new(model: ScorerModel, patch_size: usize, stats: NormalizationStats) -> Self {
        Self {
            header: CheckpointHeader {
                dtype: "float32".into(),
                param_count: model.param_count(),
                config: model.config().clone(),
                patch_size,
                stats,
                thresholds: Thresholds::default(),
                validation: None,
                best_epoch: None,
                train: None,
            },
            model,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (header_path, payload_path) = sidecar_paths(path.as_ref());
        let mut header = self.header.clone();
        header.param_count = self.model.param_count();
        header.config = self.model.config().clone();
        let payload: Vec<u8> = self.model.params().iter().flat_map(|p| p.to_le_bytes()).collect();
        write_atomic(&payload_path, &payload)?;
        write_atomic(&header_path, serde_json::to_string_pretty(&header)?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (header_path, payload_path) = sidecar_paths(path.as_ref());
        let text = fs::read_to_string(&header_path).map_err(|e| Error::io(&header_path, e))?;
        let header: CheckpointHeader = serde_json::from_str(&text).map_err(|source| Error::Header {
            path: header_path.clone(),
            source,
        })?;
        if header.dtype != "float32" {
            return Err(Error::UnsupportedDtype(header.dtype));
        }
        let bytes = fs::read(&payload_path).map_err(|e| Error::io(&payload_path, e))?;
        if bytes.len() != header.param_count * 4 {
            return Err(Error::SizeMismatch {
                expected: header.param_count * 4,
                actual: bytes.len(),
            });
        }
        let params = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let model = ScorerModel::from_params(header.config.clone(), params)?;
        Ok(Self { header, model })
    }
}
