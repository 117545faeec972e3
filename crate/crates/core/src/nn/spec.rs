//! Architecture description and the per-timestep complexity estimate.

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::{Error, Result};

/// Resampling factor between U-Net levels.
pub const LEVEL_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backbone {
    Unet,
    Mlp,
}

/// One encoder (and mirrored decoder) level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub seq_len: usize,
    pub channels: usize,
    pub n_conv: usize,
    pub n_attn: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserSpec {
    pub blocks: Vec<BlockSpec>,
    /// Channel-embedding width `d_c`.
    pub cond_dim: usize,
    /// Number of key/value tokens the embedding is split into.
    pub cond_tokens: usize,
    pub time_dim: usize,
    /// Hidden width of the channel-embedding MLP.
    pub embed_hidden: usize,
    pub backbone: Backbone,
    /// Length of the real strategy vector `2M(K+J)`.
    pub strategy_dim: usize,
    /// Length of the real channel embedding `2M(K+L)`.
    pub channel_dim: usize,
    /// Hidden width of the MLP backbone (ignored by the U-Net).
    pub mlp_width: usize,
    /// Hidden layer count of the MLP backbone.
    pub mlp_depth: usize,
}

/// Smallest multiple of `LEVEL_FACTOR^(levels-1)` holding `positions`.
pub fn padded_len(positions: usize, levels: usize) -> usize {
    let unit = LEVEL_FACTOR.pow(levels.saturating_sub(1) as u32);
    positions.div_ceil(unit) * unit
}

impl DenoiserSpec {
    /// U-Net with the given per-level widths, two residual blocks and two
    /// cross-attention layers per level, kernel 3, `d_c = 256`.
    pub fn unet(cfg: &SystemConfig, widths: &[usize]) -> Self {
        let positions = cfg.strategy_len();
        let s1 = padded_len(positions, widths.len());
        let blocks = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| BlockSpec {
                seq_len: s1 / LEVEL_FACTOR.pow(i as u32),
                channels: c,
                n_conv: 2,
                n_attn: 2,
                kernel: 3,
            })
            .collect();
        Self {
            blocks,
            cond_dim: 256,
            cond_tokens: 4,
            time_dim: 128,
            embed_hidden: 256,
            backbone: Backbone::Unet,
            strategy_dim: cfg.real_strategy_len(),
            channel_dim: cfg.real_channel_len(),
            mlp_width: 0,
            mlp_depth: 0,
        }
    }

    /// The reference architecture: widths 64 → 128 → 256.
    pub fn paper(cfg: &SystemConfig) -> Self {
        Self::unet(cfg, &[64, 128, 256])
    }

    /// Number of complex positions the U-Net sees before padding.
    pub fn positions(&self) -> usize {
        self.strategy_dim / 2
    }

    pub fn padded_positions(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.seq_len)
    }

    pub fn token_dim(&self) -> usize {
        self.cond_dim / self.cond_tokens
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::invalid("denoiser needs at least one block"));
        }
        if self.strategy_dim == 0 || self.strategy_dim % 2 != 0 || self.channel_dim == 0 {
            return Err(Error::invalid("strategy and channel dimensions must be positive and even"));
        }
        if self.cond_tokens == 0 || self.cond_dim % self.cond_tokens != 0 {
            return Err(Error::invalid("cond_dim must split evenly into tokens"));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 || self.embed_hidden == 0 {
            return Err(Error::invalid("time_dim must be positive and even"));
        }
        for b in &self.blocks {
            if b.seq_len == 0 || b.channels == 0 || b.n_conv == 0 || b.n_attn == 0 || b.kernel == 0 {
                return Err(Error::invalid("all block counts must be at least 1"));
            }
        }
        for w in self.blocks.windows(2) {
            if w[1].seq_len >= w[0].seq_len || w[0].seq_len != w[1].seq_len * LEVEL_FACTOR {
                return Err(Error::invalid("sequence lengths must shrink by 4 per level"));
            }
        }
        if self.padded_positions() < self.positions() {
            return Err(Error::invalid(format!(
                "first level holds {} positions, strategy needs {}",
                self.padded_positions(),
                self.positions()
            )));
        }
        if self.backbone == Backbone::Mlp && (self.mlp_width == 0 || self.mlp_depth == 0) {
            return Err(Error::invalid("MLP backbone needs a width and depth"));
        }
        Ok(())
    }
}

/// Per-timestep term counts of the U-Net cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Complexity {
    /// `Σ_i N_conv,i · S_i · C_i² · K_i²`.
    pub conv_terms: u128,
    /// `Σ_i N_attn,i · (S_i² · C_i + S_i · C_i²)`.
    pub attn_terms: u128,
}

impl Complexity {
    pub fn per_step(&self) -> u128 {
        self.conv_terms + self.attn_terms
    }

    /// Training total over `epochs` passes of `records` samples.
    pub fn training_total(&self, epochs: u64, records: u64) -> u128 {
        epochs as u128 * records as u128 * self.per_step()
    }

    /// Inference total for a `ddim_steps`-step sampler.
    pub fn inference_total(&self, ddim_steps: u64) -> u128 {
        ddim_steps as u128 * self.per_step()
    }
}

pub fn complexity_estimate(spec: &DenoiserSpec) -> Complexity {
    let mut conv = 0u128;
    let mut attn = 0u128;
    for b in &spec.blocks {
        let (s, c, k) = (b.seq_len as u128, b.channels as u128, b.kernel as u128);
        conv += b.n_conv as u128 * s * c * c * k * k;
        attn += b.n_attn as u128 * (s * s * c + s * c * c);
    }
    Complexity {
        conv_terms: conv,
        attn_terms: attn,
    }
}
