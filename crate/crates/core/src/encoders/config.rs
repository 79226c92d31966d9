use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which text-encoder parameters the decoder reuses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// Everything except the self-attention blocks is shared.
    #[default]
    AllButSa,
    /// Only the self-attention blocks are shared.
    SaOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub layers: usize,
    pub heads: usize,
    /// Hidden size of the feed-forward block as a multiple of `width`.
    pub ffn_mult: usize,
    pub patch: usize,
    /// Set from the corpus when loaded from an experiment config.
    #[serde(skip)]
    pub image_side: usize,
    #[serde(skip)]
    pub channels: usize,
    pub proj_dim: usize,
    /// Positional table size shared by every text stack.
    pub max_len: usize,
    pub momentum: f64,
    pub share_mode: ShareMode,
    pub temperature: f64,
    pub queue_capacity: usize,
    pub hard_negatives: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 64,
            layers: 2,
            heads: 4,
            ffn_mult: 4,
            patch: 8,
            image_side: 32,
            channels: 1,
            proj_dim: 32,
            max_len: 64,
            momentum: 0.995,
            share_mode: ShareMode::AllButSa,
            temperature: 0.07,
            queue_capacity: 256,
            hard_negatives: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::config(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.patch == 0 || self.image_side % self.patch != 0 {
            return Err(Error::config(format!(
                "image side {} is not divisible by patch {}",
                self.image_side, self.patch
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.temperature <= 0.0 {
            return Err(Error::config("temperature must be positive"));
        }
        if self.layers == 0 || self.proj_dim == 0 || self.max_len == 0 || self.ffn_mult == 0 {
            return Err(Error::config("layers, proj_dim, max_len and ffn_mult must be positive"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_side / self.patch).pow(2)
    }

    pub fn d_k(&self) -> usize {
        self.width / self.heads
    }
}
