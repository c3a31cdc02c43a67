use std::collections::HashSet;

use crate::error::{Error, Result};

/// A `[T × N × C]` observation cube with entity and channel labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    steps: usize,
    entity_ids: Vec<String>,
    channel_names: Vec<String>,
    start_time: i64,
    step_seconds: i64,
}

impl Dataset {
    /// `values` is row-major `[T][N][C]`.
    pub fn new(
        values: Vec<f64>,
        steps: usize,
        entity_ids: Vec<String>,
        channel_names: Vec<String>,
        start_time: i64,
        step_seconds: i64,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Shape("dataset needs at least one time step".into()));
        }
        if entity_ids.is_empty() || channel_names.is_empty() {
            return Err(Error::Shape(
                "dataset needs at least one entity and channel".into(),
            ));
        }
        let expect = steps * entity_ids.len() * channel_names.len();
        if values.len() != expect {
            return Err(Error::Shape(format!(
                "dataset [{steps} × {} × {}] needs {expect} values, got {}",
                entity_ids.len(),
                channel_names.len(),
                values.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = entity_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Contract(format!("duplicate entity id `{dup}`")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("dataset contains non-finite values".into()));
        }
        Ok(Self {
            values,
            steps,
            entity_ids,
            channel_names,
            start_time,
            step_seconds,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_entities(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn entity_ids(&self) -> &[String] {
        &self.entity_ids
    }

    pub fn channel_names(&self) -> &[String] {
        &self.channel_names
    }

    pub fn start_time(&self) -> i64 {
        self.start_time
    }

    pub fn step_seconds(&self) -> i64 {
        self.step_seconds
    }

    pub fn value(&self, t: usize, n: usize, c: usize) -> f64 {
        let (nn, cc) = (self.num_entities(), self.channels());
        self.values[(t * nn + n) * cc + c]
    }

    /// One entity's channel as a time series.
    pub fn series(&self, n: usize, c: usize) -> Vec<f64> {
        (0..self.steps).map(|t| self.value(t, n, c)).collect()
    }

    /// The contiguous time range `[from, to)`.
    pub fn slice_time(&self, from: usize, to: usize) -> Result<Dataset> {
        if from >= to || to > self.steps {
            return Err(Error::Split(format!(
                "time range {from}..{to} outside 0..{}",
                self.steps
            )));
        }
        let row = self.num_entities() * self.channels();
        Ok(Dataset {
            values: self.values[from * row..to * row].to_vec(),
            steps: to - from,
            entity_ids: self.entity_ids.clone(),
            channel_names: self.channel_names.clone(),
            start_time: self.start_time + from as i64 * self.step_seconds,
            step_seconds: self.step_seconds,
        })
    }

    /// Keeps the listed entity columns, in the given order.
    pub fn select_entities(&self, keep: &[usize]) -> Result<Dataset> {
        if keep.is_empty() {
            return Err(Error::Contract("entity selection is empty".into()));
        }
        if let Some(&bad) = keep.iter().find(|&&i| i >= self.num_entities()) {
            return Err(Error::Contract(format!("entity index {bad} out of range")));
        }
        let (n, c) = (self.num_entities(), self.channels());
        let mut values = Vec::with_capacity(self.steps * keep.len() * c);
        for t in 0..self.steps {
            for &e in keep {
                let base = (t * n + e) * c;
                values.extend_from_slice(&self.values[base..base + c]);
            }
        }
        Dataset::new(
            values,
            self.steps,
            keep.iter().map(|&i| self.entity_ids[i].clone()).collect(),
            self.channel_names.clone(),
            self.start_time,
            self.step_seconds,
        )
    }

    /// Same labels, new values (used by normalization).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Dataset> {
        Dataset::new(
            values,
            self.steps,
            self.entity_ids.clone(),
            self.channel_names.clone(),
            self.start_time,
            self.step_seconds,
        )
    }

    pub fn entity_index(&self, id: &str) -> Option<usize> {
        self.entity_ids.iter().position(|e| e == id)
    }
}
