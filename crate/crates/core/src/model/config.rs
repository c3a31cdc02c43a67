use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Architecture variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Frozen-key projection, latent attention and temporal MLP per block.
    EiFormer,
    /// Full N×N entity self-attention (inverted-transformer baseline).
    IVariate,
    /// One linear map from an entity's history to its forecast.
    Linear,
    /// Fixed-width entity-mixing MLP bound to the training entity count.
    FeatMlp,
}

impl Arch {
    pub const ALL: [Arch; 4] = [Arch::EiFormer, Arch::IVariate, Arch::Linear, Arch::FeatMlp];

    pub fn as_str(self) -> &'static str {
        match self {
            Arch::EiFormer => "eiformer",
            Arch::IVariate => "ivariate",
            Arch::Linear => "linear",
            Arch::FeatMlp => "featmlp",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arch::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::config("arch", format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: Arch,
    /// History length T.
    pub history_len: usize,
    /// Forecast length F.
    pub forecast_len: usize,
    /// Channels C per entity.
    pub channels: usize,
    /// Token width D.
    pub embed_dim: usize,
    /// Latent factor count M.
    pub latent_count: usize,
    /// Block count L.
    pub num_blocks: usize,
    /// Temporal MLP hidden width is `hidden_mult · D`.
    pub hidden_mult: usize,
    pub seed: u64,
    /// Entity width of the mixing layer; required by `featmlp` only.
    pub featmlp_entities: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arch: Arch::EiFormer,
            history_len: 12,
            forecast_len: 12,
            channels: 1,
            embed_dim: 32,
            latent_count: 8,
            num_blocks: 2,
            hidden_mult: 2,
            seed: 0,
            featmlp_entities: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("history_len", self.history_len),
            ("forecast_len", self.forecast_len),
            ("channels", self.channels),
            ("embed_dim", self.embed_dim),
            ("latent_count", self.latent_count),
            ("num_blocks", self.num_blocks),
            ("hidden_mult", self.hidden_mult),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.arch == Arch::FeatMlp && !matches!(self.featmlp_entities, Some(n) if n >= 1) {
            return Err(Error::config(
                "featmlp_entities",
                "featmlp needs a fixed entity count of at least 1",
            ));
        }
        Ok(())
    }
}
