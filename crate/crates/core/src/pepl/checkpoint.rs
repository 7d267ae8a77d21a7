use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::PeplParams;
use crate::encoders::EncoderDims;
use crate::error::{Error, Result};
use crate::Real;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// How a checkpoint was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub batch_size: usize,
    /// `l1` for contrastive pre-training, `l2` for the difference-objective ablation.
    pub objective: String,
    pub final_loss: Real,
}

/// Trained prompt-learning parameters. Once frozen, parameters are read-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeplCheckpoint {
    format_version: u32,
    dims: EncoderDims,
    metadata: Option<TrainingMetadata>,
    frozen: bool,
    params: PeplParams,
}

impl PeplCheckpoint {
    pub fn new(params: PeplParams, dims: EncoderDims, metadata: Option<TrainingMetadata>) -> Self {
        PeplCheckpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            dims,
            metadata,
            frozen: false,
            params,
        }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn frozen(mut self) -> Self {
        self.freeze();
        self
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn dims(&self) -> EncoderDims {
        self.dims
    }

    pub fn metadata(&self) -> Option<&TrainingMetadata> {
        self.metadata.as_ref()
    }

    pub fn params(&self) -> &PeplParams {
        &self.params
    }

    /// Mutable access to the parameters; rejected once frozen.
    pub fn params_mut(&mut self) -> Result<&mut PeplParams> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    pub fn set_metadata(&mut self, metadata: TrainingMetadata) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        self.metadata = Some(metadata);
        Ok(())
    }

    /// sha256 of all parameter values as little-endian `f64`, hex-encoded.
    pub fn param_digest(&self) -> String {
        hex::encode(Sha256::digest(self.params.param_bytes()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// sha256 of the JSON serialization, hex-encoded.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: PeplCheckpoint = serde_json::from_str(text)
            .map_err(|e| Error::Load(format!("checkpoint: {e}")))?;
        if ckpt.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Load(format!(
                "unsupported checkpoint format_version {}",
                ckpt.format_version
            )));
        }
        let bank = &ckpt.params.projectors;
        if bank.d_e() != ckpt.dims.d_e
            || ckpt.params.guider.head().input_dim() != ckpt.dims.d_b
            || ckpt.params.guider.token_dim() != ckpt.dims.d_tok
        {
            return Err(Error::Load("checkpoint parameters do not match its dims".into()));
        }
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }
}
