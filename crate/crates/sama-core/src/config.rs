//! Model and training configuration.

use crate::error::SamaError;
use serde::{Deserialize, Serialize};

/// Timescale function of the temporal blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MsmVariant {
    /// Depthwise conv with kernel 2 over time, zero padding at the start.
    PointwiseConv,
    /// Linear layer over the concatenated adjacent-frame features.
    Linear,
}

/// Full configuration of a model plus its training hyperparameters.
///
/// Every run artifact (checkpoint, log, metrics JSON) embeds the effective
/// config so results can be traced back to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of alternating spatial/temporal scan layer pairs, and of
    /// attention layer pairs.
    pub depth: usize,
    /// Feature width d.
    pub dim: usize,
    /// State size n of each scan.
    pub state: usize,
    /// Attention heads; must divide `dim`.
    pub heads: usize,
    pub msm_variant: MsmVariant,
    /// Velocity-loss weight.
    pub lambda_m: f64,
    /// Scale-normalized-loss weight.
    pub lambda_n: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Clip length sampled from each training sequence.
    pub clip_len: usize,
    /// Clips drawn per epoch; 0 means one pass over every sequence.
    pub clips_per_epoch: usize,
    /// Write a checkpoint every this many epochs (and always at the end).
    pub checkpoint_every: usize,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    /// Enable the learnable adjacency fusion in spatial blocks.
    pub ssi_fusion: bool,
    /// Enable the previous-frame tap of the temporal timescale.
    pub msm_motion: bool,
    /// Enable the learnable per-channel input feed-through on scans.
    pub d_skip: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            dim: 32,
            state: 8,
            heads: 2,
            msm_variant: MsmVariant::PointwiseConv,
            lambda_m: 20.0,
            lambda_n: 0.5,
            seed: 0,
            learning_rate: 2e-3,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 4,
            clip_len: 16,
            clips_per_epoch: 8,
            checkpoint_every: 100,
            lr_decay: 0.99,
            ssi_fusion: true,
            msm_motion: true,
            d_skip: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), SamaError> {
        if self.depth == 0 {
            return Err(SamaError::Config("depth must be positive".into()));
        }
        if self.dim == 0 || self.state == 0 || self.heads == 0 {
            return Err(SamaError::Config(
                "dim, state and heads must be positive".into(),
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(SamaError::Config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.clip_len == 0 {
            return Err(SamaError::Config(
                "epochs, batch_size and clip_len must be positive".into(),
            ));
        }
        if self.checkpoint_every == 0 {
            return Err(SamaError::Config("checkpoint_every must be positive".into()));
        }
        for (name, v) in [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("lambda_m", self.lambda_m),
            ("lambda_n", self.lambda_n),
            ("lr_decay", self.lr_decay),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(SamaError::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SamaError> {
        let cfg: ModelConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// The ablation variant with neither fusion nor motion timescales.
    pub fn vanilla(mut self) -> Self {
        self.ssi_fusion = false;
        self.msm_motion = false;
        self
    }
}
