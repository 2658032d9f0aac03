//! Self-describing JSON checkpoint: config, parameters, optimizer moments,
//! step counter, and scaler state. Serialization is deterministic, so two
//! runs with the same seed and schedule write byte-identical files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, ModelParams, TrainConfig};
use crate::error::{Error, Result};
use crate::lowprec::LossScaler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub scaler: Option<LossScaler>,
    pub step: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string(self)?;
        fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let body = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&body)?;
        let dims = super::ModelDims::from_config(&ckpt.config);
        if ckpt.params.dims != dims {
            return Err(Error::Data("checkpoint dims do not match its config".into()));
        }
        Ok(ckpt)
    }
}
