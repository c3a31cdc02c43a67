//! `eif-v1` checkpoint container.
//!
//! Layout: `u64` little-endian header length, a JSON header, then every
//! blob listed in the header as consecutive little-endian `f64`s.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compute::{ParamStore, Tensor};
use crate::data::{NormStats, ScenarioSpec};
use crate::error::{Error, Result};
use crate::model::{ForecastModel, ModelConfig};

pub const CHECKPOINT_VERSION: &str = "eif-v1";

/// What a training run recorded alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub optimizer_steps: usize,
    pub seed: u64,
    pub scenario: ScenarioSpec,
    /// Entity ids seen in training, in model slot order.
    pub train_entities: Vec<String>,
    pub new_ids: Vec<String>,
    pub removed_ids: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ForecastModel,
    pub norm: NormStats,
    pub meta: RunMeta,
}

#[derive(Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct NormHeader {
    entity_ids: Vec<String>,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    config: ModelConfig,
    meta: RunMeta,
    norm: NormHeader,
    blobs: Vec<BlobEntry>,
}

const NORM_BLOBS: [&str; 4] = [
    "norm.mean",
    "norm.std",
    "norm.pooled_mean",
    "norm.pooled_std",
];

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blobs = Vec::new();
        let mut payload: Vec<&[f64]> = Vec::new();
        for p in self.model.params.iter() {
            blobs.push(BlobEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            });
            payload.push(p.value.data());
        }
        let n = &self.norm;
        for (name, data) in NORM_BLOBS
            .iter()
            .zip([&n.mean, &n.std, &n.pooled_mean, &n.pooled_std])
        {
            blobs.push(BlobEntry {
                name: name.to_string(),
                shape: vec![data.len()],
                trainable: false,
            });
            payload.push(data);
        }
        let header = Header {
            version: CHECKPOINT_VERSION.into(),
            config: self.model.config.clone(),
            meta: self.meta.clone(),
            norm: NormHeader {
                entity_ids: n.entity_ids.clone(),
                channels: n.channels,
            },
            blobs,
        };
        let json = serde_json::to_vec(&header)?;
        let total: usize = payload.iter().map(|p| p.len()).sum();
        let mut out = Vec::with_capacity(8 + json.len() + 8 * total);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for p in payload {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 8 {
            return Err(bad("file too short for a header".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if hlen > body.len() {
            return Err(bad(format!("header length {hlen} exceeds file size")));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])
            .map_err(|e| bad(format!("corrupted header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "version `{}` is not `{CHECKPOINT_VERSION}`",
                header.version
            )));
        }
        let data = &body[hlen..];
        let total: usize = header
            .blobs
            .iter()
            .map(|b| b.shape.iter().product::<usize>())
            .sum();
        if data.len() != total * 8 {
            return Err(bad(format!(
                "blob section has {} bytes, header describes {}",
                data.len(),
                total * 8
            )));
        }
        let mut floats = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut store = ParamStore::new();
        let mut norm_parts: Vec<Vec<f64>> = Vec::new();
        for b in &header.blobs {
            let len: usize = b.shape.iter().product();
            let vals: Vec<f64> = floats.by_ref().take(len).collect();
            if NORM_BLOBS.contains(&b.name.as_str()) {
                norm_parts.push(vals);
            } else {
                if store.by_name(&b.name).is_some() {
                    return Err(bad(format!("duplicate blob `{}`", b.name)));
                }
                let t = Tensor::new(b.shape.clone(), vals)
                    .map_err(|e| bad(format!("blob `{}`: {e}", b.name)))?;
                store.add(b.name.clone(), t, b.trainable);
            }
        }
        let [mean, std, pooled_mean, pooled_std]: [Vec<f64>; 4] = norm_parts
            .try_into()
            .map_err(|_| bad("normalization blobs missing".into()))?;
        let norm = NormStats {
            entity_ids: header.norm.entity_ids,
            channels: header.norm.channels,
            mean,
            std,
            pooled_mean,
            pooled_std,
        };
        let c = norm.channels;
        if norm.mean.len() != norm.entity_ids.len() * c
            || norm.std.len() != norm.mean.len()
            || norm.pooled_mean.len() != c
            || norm.pooled_std.len() != c
        {
            return Err(bad("normalization blob sizes disagree with header".into()));
        }
        let model = ForecastModel::from_parts(header.config, store)?;
        Ok(Checkpoint {
            model,
            norm,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}
