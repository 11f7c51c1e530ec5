use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyperparameters of the toy MM-DiT.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of dual-stream blocks.
    pub depth: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub latent_channels: usize,
    pub latent_height: usize,
    pub latent_width: usize,
    pub patch_size: usize,
    /// Text tokens per caption (T).
    pub text_tokens: usize,
    pub text_embed_dim: usize,
    /// Width of the sinusoidal timestep features fed to the time MLP.
    pub time_embed_dim: usize,
    /// Hidden width of each stream MLP as a multiple of `hidden_dim`.
    pub mlp_ratio: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            depth: 6,
            hidden_dim: 64,
            heads: 4,
            latent_channels: 4,
            latent_height: 8,
            latent_width: 8,
            patch_size: 2,
            text_tokens: 8,
            text_embed_dim: 32,
            time_embed_dim: 64,
            mlp_ratio: 4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("depth", self.depth),
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("latent_channels", self.latent_channels),
            ("latent_height", self.latent_height),
            ("latent_width", self.latent_width),
            ("patch_size", self.patch_size),
            ("text_tokens", self.text_tokens),
            ("text_embed_dim", self.text_embed_dim),
            ("time_embed_dim", self.time_embed_dim),
            ("mlp_ratio", self.mlp_ratio),
        ] {
            if v == 0 {
                problems.push(format!("model.{name} must be positive"));
            }
        }
        if problems.is_empty() {
            if self.hidden_dim % self.heads != 0 {
                problems.push(format!(
                    "model.hidden_dim {} is not divisible by model.heads {}",
                    self.hidden_dim, self.heads
                ));
            }
            if self.latent_height % self.patch_size != 0 || self.latent_width % self.patch_size != 0 {
                problems.push(format!(
                    "model.patch_size {} does not divide latent {}x{}",
                    self.patch_size, self.latent_height, self.latent_width
                ));
            }
            if self.time_embed_dim % 2 != 0 {
                problems.push(format!("model.time_embed_dim {} must be even", self.time_embed_dim));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Number of image tokens P.
    pub fn num_patches(&self) -> usize {
        (self.latent_height / self.patch_size) * (self.latent_width / self.patch_size)
    }

    /// Width of one flattened patch, `C·p²`.
    pub fn patch_dim(&self) -> usize {
        self.latent_channels * self.patch_size * self.patch_size
    }

    pub fn latent_shape(&self) -> [usize; 3] {
        [self.latent_channels, self.latent_height, self.latent_width]
    }

    pub fn latent_numel(&self) -> usize {
        self.latent_channels * self.latent_height * self.latent_width
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}
