//! Per-horizon metric tables.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::ErrorAcc;
use crate::data::ScenarioSpec;
use crate::error::{Error, Result};

pub const DEFAULT_HORIZONS: [usize; 3] = [3, 6, 12];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    /// 1-based forecast step.
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every target at this step was masked.
    pub mape: Option<f64>,
    pub mape_mask_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub mape_mask_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub arch: String,
    pub scenario: Option<ScenarioSpec>,
    /// `strict` or `slot-reuse`.
    pub protocol: String,
    pub train_entities: usize,
    pub test_entities: usize,
    pub new_entities: usize,
    pub removed_entities: usize,
    /// Where normalization statistics came from.
    pub normalization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub forecast_len: usize,
    pub per_step: Vec<StepRow>,
    pub horizons: Vec<usize>,
    /// Mean of the `per_step` rows; MAPE averages the defined steps.
    pub average: Option<AverageRow>,
    /// Number of evaluated windows.
    pub samples: usize,
    /// Number of scalar forecasts per step.
    pub points_per_step: usize,
    pub mape_mask_count: usize,
    pub meta: ReportMeta,
    /// Set when evaluation could not run (e.g. an entity-count mismatch).
    pub error: Option<String>,
}

pub fn check_horizons(horizons: &[usize], forecast_len: usize) -> Result<()> {
    if horizons.is_empty() {
        return Err(Error::config(
            "horizons",
            "at least one horizon is required",
        ));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h == 0 || h > forecast_len) {
        return Err(Error::config(
            "horizons",
            format!("horizon exceeds forecast length ({h} > {forecast_len})"),
        ));
    }
    Ok(())
}

impl MetricsReport {
    pub fn from_steps(
        steps: &[ErrorAcc],
        horizons: &[usize],
        samples: usize,
        meta: ReportMeta,
    ) -> Result<MetricsReport> {
        let f = steps.len();
        check_horizons(horizons, f)?;
        let per_step: Vec<StepRow> = steps
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let m = a.mape();
                StepRow {
                    step: i + 1,
                    mae: a.mae(),
                    rmse: a.rmse(),
                    mape: m.value,
                    mape_mask_count: m.masked,
                }
            })
            .collect();
        let mean = |g: &dyn Fn(&StepRow) -> f64| per_step.iter().map(g).sum::<f64>() / f as f64;
        let defined: Vec<f64> = per_step.iter().filter_map(|r| r.mape).collect();
        let mape_mask_count = per_step.iter().map(|r| r.mape_mask_count).sum();
        let average = AverageRow {
            mae: mean(&|r| r.mae),
            rmse: mean(&|r| r.rmse),
            mape: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
            mape_mask_count,
        };
        Ok(MetricsReport {
            forecast_len: f,
            points_per_step: steps.first().map_or(0, |a| a.count),
            per_step,
            horizons: horizons.to_vec(),
            average: Some(average),
            samples,
            mape_mask_count,
            meta,
            error: None,
        })
    }

    /// A report that records why evaluation did not produce metrics.
    pub fn failed(
        forecast_len: usize,
        horizons: &[usize],
        meta: ReportMeta,
        error: String,
    ) -> Self {
        MetricsReport {
            forecast_len,
            per_step: vec![],
            horizons: horizons.to_vec(),
            average: None,
            samples: 0,
            points_per_step: 0,
            mape_mask_count: 0,
            meta,
            error: Some(error),
        }
    }

    pub fn step(&self, h: usize) -> Option<&StepRow> {
        self.per_step.get(h.checked_sub(1)?)
    }

    /// Re-selects the reported horizons.
    pub fn with_horizons(mut self, horizons: &[usize]) -> Result<Self> {
        check_horizons(horizons, self.forecast_len)?;
        self.horizons = horizons.to_vec();
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per selected horizon plus `average`; a failed report has a
    /// single `error` row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["horizon", "mae", "rmse", "mape", "mape_mask_count", "error"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        if let Some(err) = &self.error {
            w.write_record(["error", "", "", "", "", err.as_str()])?;
        } else {
            for &h in &self.horizons {
                let r = &self.per_step[h - 1];
                w.write_record([
                    h.to_string(),
                    r.mae.to_string(),
                    r.rmse.to_string(),
                    opt(r.mape),
                    r.mape_mask_count.to_string(),
                    String::new(),
                ])?;
            }
            if let Some(a) = &self.average {
                w.write_record([
                    "average".to_string(),
                    a.mae.to_string(),
                    a.rmse.to_string(),
                    opt(a.mape),
                    a.mape_mask_count.to_string(),
                    String::new(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Writes `<stem>.json` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.json")), self.to_json()?)?;
        std::fs::write(dir.join(format!("{stem}.csv")), self.to_csv()?)?;
        Ok(())
    }
}
