//! Per-entity z-score normalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Train-segment statistics keyed by entity id.
///
/// Entities absent from the fit (unseen during training) fall back to the
/// pooled per-channel statistics of the whole fit segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub entity_ids: Vec<String>,
    pub channels: usize,
    /// `[N][C]`
    pub mean: Vec<f64>,
    /// `[N][C]`, each at least [`STD_FLOOR`].
    pub std: Vec<f64>,
    pub pooled_mean: Vec<f64>,
    pub pooled_std: Vec<f64>,
}

/// Per-column statistics resolved for a concrete entity order.
#[derive(Clone, Debug)]
pub struct Aligned {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub channels: usize,
}

fn moments(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for x in xs.clone() {
        n += 1;
        sum += x;
    }
    let mean = sum / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl NormStats {
    pub fn fit(train: &Dataset) -> NormStats {
        let (t, n, c) = (train.steps(), train.num_entities(), train.channels());
        let vals = train.values();
        let mut mean = Vec::with_capacity(n * c);
        let mut std = Vec::with_capacity(n * c);
        for e in 0..n {
            let all_zero = (0..t).all(|s| (0..c).all(|k| vals[(s * n + e) * c + k] == 0.0));
            for k in 0..c {
                if all_zero {
                    mean.push(0.0);
                    std.push(STD_FLOOR);
                    continue;
                }
                let (m, s) = moments((0..t).map(|s| vals[(s * n + e) * c + k]));
                mean.push(m);
                std.push(s.max(STD_FLOOR));
            }
        }
        let mut pooled_mean = Vec::with_capacity(c);
        let mut pooled_std = Vec::with_capacity(c);
        for k in 0..c {
            let (m, s) = moments((0..t * n).map(|i| vals[i * c + k]));
            pooled_mean.push(m);
            pooled_std.push(s.max(STD_FLOOR));
        }
        NormStats {
            entity_ids: train.entity_ids().to_vec(),
            channels: c,
            mean,
            std,
            pooled_mean,
            pooled_std,
        }
    }

    /// Statistics for `ids` in that order.
    pub fn align(&self, ids: &[String]) -> Aligned {
        let index: HashMap<&str, usize> = self
            .entity_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let c = self.channels;
        let mut mean = Vec::with_capacity(ids.len() * c);
        let mut std = Vec::with_capacity(ids.len() * c);
        for id in ids {
            match index.get(id.as_str()) {
                Some(&e) => {
                    mean.extend_from_slice(&self.mean[e * c..(e + 1) * c]);
                    std.extend_from_slice(&self.std[e * c..(e + 1) * c]);
                }
                None => {
                    mean.extend_from_slice(&self.pooled_mean);
                    std.extend_from_slice(&self.pooled_std);
                }
            }
        }
        Aligned {
            mean,
            std,
            channels: c,
        }
    }

    fn check(&self, d: &Dataset) -> Result<()> {
        if d.channels() != self.channels {
            return Err(Error::Shape(format!(
                "normalizer fitted on {} channels, dataset has {}",
                self.channels,
                d.channels()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let mut v = d.values().to_vec();
        self.align(d.entity_ids()).normalize(&mut v);
        d.with_values(v)
    }

    pub fn invert(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let mut v = d.values().to_vec();
        self.align(d.entity_ids()).denormalize(&mut v);
        d.with_values(v)
    }
}

impl Aligned {
    /// In place over any buffer whose trailing layout is `[N][C]`.
    pub fn normalize(&self, buf: &mut [f64]) {
        let row = self.mean.len();
        for chunk in buf.chunks_mut(row) {
            for (x, (m, s)) in chunk.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *x = (*x - m) / s;
            }
        }
    }

    pub fn denormalize(&self, buf: &mut [f64]) {
        let row = self.mean.len();
        for chunk in buf.chunks_mut(row) {
            for (x, (m, s)) in chunk.iter_mut().zip(self.mean.iter().zip(&self.std)) {
                *x = *x * s + m;
            }
        }
    }
}
