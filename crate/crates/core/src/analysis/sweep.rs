//! One-axis hyper-parameter sensitivity sweeps.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::expected_param_count;
use crate::par;
use crate::train::{
    evaluate, load_source, prepare_from, resolve_model, train_prepared, EvalOptions, TrainConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Learning rate.
    Lr,
    /// Block count `L`.
    Layers,
    /// Token width `D`.
    Neurons,
}

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::Lr => "lr",
            SweepAxis::Layers => "layers",
            SweepAxis::Neurons => "neurons",
        }
    }

    /// Parses a comma-separated value list for this axis.
    pub fn parse_values(self, text: &str) -> Result<Vec<f64>> {
        let values: Vec<f64> = text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::config("values", format!("`{s}` is not a number")))
            })
            .collect::<Result<_>>()?;
        check_values(self, &values)?;
        Ok(values)
    }
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lr" => Ok(SweepAxis::Lr),
            "layers" => Ok(SweepAxis::Layers),
            "neurons" => Ok(SweepAxis::Neurons),
            o => Err(Error::config("axis", format!("unknown sweep axis `{o}`"))),
        }
    }
}

fn check_values(axis: SweepAxis, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::config("values", "at least one value is required"));
    }
    for &v in values {
        let ok = match axis {
            SweepAxis::Lr => v.is_finite() && v >= 0.0,
            _ => v.fract() == 0.0 && (1.0..=1e6).contains(&v),
        };
        if !ok {
            return Err(Error::config(
                "values",
                format!("{v} is not valid for axis {}", axis.as_str()),
            ));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub params: usize,
    pub val_mae: Option<f64>,
    pub test_mae: Option<f64>,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

pub fn apply_axis(base: &TrainConfig, axis: SweepAxis, value: f64) -> TrainConfig {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Lr => cfg.lr = value,
        SweepAxis::Layers => cfg.model.num_blocks = value as usize,
        SweepAxis::Neurons => cfg.model.embed_dim = value as usize,
    }
    cfg
}

/// Trains one run per value (concurrently) with everything else fixed.
/// A failing run is recorded in its row; the sweep itself only fails on
/// invalid input or unreadable data.
pub fn sweep(base: &TrainConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepReport> {
    check_values(axis, values)?;
    let data = load_source(&base.data)?;
    let rows = par::map(values, |&value| {
        let t0 = Instant::now();
        let cfg = apply_axis(base, axis, value);
        let outcome = prepare_from(&cfg, &data).and_then(|prep| {
            let params = expected_param_count(&resolve_model(&cfg.model, &prep.train)?);
            let (ckpt, _) = train_prepared(&cfg, &prep)?;
            let report = evaluate(&ckpt, &prep.test, &EvalOptions::default())?;
            Ok((
                params,
                ckpt.meta.best_val_mae,
                report.average.map(|a| a.mae),
            ))
        });
        let wall_seconds = t0.elapsed().as_secs_f64();
        match outcome {
            Ok((params, val, test)) => SweepRow {
                value,
                params,
                val_mae: Some(val),
                test_mae: test,
                wall_seconds,
                error: None,
            },
            Err(e) => SweepRow {
                value,
                params: 0,
                val_mae: None,
                test_mae: None,
                wall_seconds,
                error: Some(e.to_string()),
            },
        }
    });
    Ok(SweepReport { axis, rows })
}

impl SweepReport {
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_some())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "axis",
            "value",
            "params",
            "val_mae",
            "test_mae",
            "wall_seconds",
            "status",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                self.axis.as_str().to_string(),
                r.value.to_string(),
                r.params.to_string(),
                opt(r.val_mae),
                opt(r.test_mae),
                format!("{:.3}", r.wall_seconds),
                if r.error.is_some() { "failed" } else { "ok" }.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_parsing() {
        assert_eq!(
            SweepAxis::Lr.parse_values("1e-3,1e-4,1e-5").unwrap().len(),
            3
        );
        assert!(SweepAxis::Lr.parse_values("abc").is_err());
        assert!(SweepAxis::Layers.parse_values("1,2.5").is_err());
        assert!(SweepAxis::Neurons.parse_values("").is_err());
    }
}
