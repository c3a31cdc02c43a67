//! Clustered seasonal series with emerging and vanishing entities.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Generator settings. Emerging and vanishing entities are drawn from
/// disjoint seeded subsets; their onsets/offsets land in the final 40% of
/// the series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_entities: usize,
    pub n_clusters: usize,
    pub steps: usize,
    pub season_period: f64,
    pub noise_sigma: f64,
    pub emerge_frac: f64,
    pub vanish_frac: f64,
    pub seed: u64,
    /// Per-entity scales are log-uniform over this range.
    pub scale_range: (f64, f64),
    /// Step deviation of the per-cluster random-walk trend.
    pub trend_sigma: f64,
    pub base_level: f64,
    pub start_time: i64,
    pub step_seconds: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_entities: 100,
            n_clusters: 5,
            steps: 2000,
            season_period: 24.0,
            noise_sigma: 0.3,
            emerge_frac: 0.0,
            vanish_frac: 0.0,
            seed: 0,
            scale_range: (0.5, 2.0),
            trend_sigma: 0.02,
            base_level: 2.0,
            start_time: 1_700_000_000,
            step_seconds: 300,
        }
    }
}

/// Which entities were made to emerge or vanish, and when.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Census {
    /// `(entity index, first non-zero step)`
    pub emerging: Vec<(usize, usize)>,
    /// `(entity index, first all-zero step)`
    pub vanishing: Vec<(usize, usize)>,
}

fn check_frac(field: &str, v: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&v) {
        return Err(Error::config(
            field,
            format!("out of range [0, 0.5], got {v}"),
        ));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_entities == 0 {
            return Err(Error::config("n_entities", "must be at least 1"));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_entities {
            return Err(Error::config("n_clusters", "must be in 1..=n_entities"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.season_period.is_finite() && self.season_period > 0.0) {
            return Err(Error::config("season_period", "must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::config("noise_sigma", "must be non-negative"));
        }
        check_frac("emerge_frac", self.emerge_frac)?;
        check_frac("vanish_frac", self.vanish_frac)?;
        let (lo, hi) = self.scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("scale_range", "needs 0 < lo <= hi"));
        }
        if !(self.trend_sigma.is_finite() && self.trend_sigma >= 0.0) {
            return Err(Error::config("trend_sigma", "must be non-negative"));
        }
        let (e, v) = self.census_counts();
        if (e > 0 || v > 0) && self.steps < 2 {
            return Err(Error::config(
                "steps",
                "emerging/vanishing entities need T >= 2",
            ));
        }
        Ok(())
    }

    /// `(emerging, vanishing)` entity counts.
    pub fn census_counts(&self) -> (usize, usize) {
        let n = self.n_entities as f64;
        (
            (self.emerge_frac * n).round() as usize,
            (self.vanish_frac * n).round() as usize,
        )
    }
}

pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Dataset> {
    gen_synthetic_with_census(cfg).map(|(d, _)| d)
}

pub fn gen_synthetic_with_census(cfg: &SynthConfig) -> Result<(Dataset, Census)> {
    cfg.validate()?;
    let (n, k, t) = (cfg.n_entities, cfg.n_clusters, cfg.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let offset = rng.random_range(0.0..TAU);
    let mut latent = vec![0.0; k * t];
    for c in 0..k {
        let phase = offset + TAU * c as f64 / k as f64;
        let mut walk = 0.0;
        for s in 0..t {
            if s > 0 {
                walk += cfg.trend_sigma * std_normal.sample(&mut rng);
            }
            latent[c * t + s] =
                cfg.base_level + (TAU * s as f64 / cfg.season_period + phase).sin() + walk;
        }
    }

    let (lo, hi) = (cfg.scale_range.0.ln(), cfg.scale_range.1.ln());
    let scales: Vec<f64> = (0..n)
        .map(|_| {
            if hi > lo {
                rng.random_range(lo..hi).exp()
            } else {
                lo.exp()
            }
        })
        .collect();

    let mut values = vec![0.0; t * n];
    for s in 0..t {
        for i in 0..n {
            let noise = cfg.noise_sigma * std_normal.sample(&mut rng);
            values[s * n + i] = scales[i] * latent[(i % k) * t + s] + noise;
        }
    }

    let (ne, nv) = cfg.census_counts();
    let mut census = Census::default();
    if ne + nv > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let first = (((t as f64) * 0.6).ceil() as usize).clamp(1, t - 1);
        for &i in &order[..ne] {
            let onset = rng.random_range(first..t);
            for s in 0..onset {
                values[s * n + i] = 0.0;
            }
            census.emerging.push((i, onset));
        }
        for &i in &order[ne..ne + nv] {
            let offset = rng.random_range(first..t);
            for s in offset..t {
                values[s * n + i] = 0.0;
            }
            census.vanishing.push((i, offset));
        }
        census.emerging.sort_unstable();
        census.vanishing.sort_unstable();
    }

    let width = (n.saturating_sub(1)).to_string().len().max(4);
    let ids = (0..n).map(|i| format!("e{i:0width$}")).collect();
    let d = Dataset::new(
        values,
        t,
        ids,
        vec!["value".into()],
        cfg.start_time,
        cfg.step_seconds,
    )?;
    Ok((d, census))
}
