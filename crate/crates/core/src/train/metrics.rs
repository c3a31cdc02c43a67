//! Point-forecast error metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Targets with `|t| <= MAPE_EPS` are excluded from MAPE.
pub const MAPE_EPS: f64 = 1e-4;

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sum {
    sum: f64,
    comp: f64,
}

impl Sum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Sum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// MAPE with its mask bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percentage; `None` when every target was masked.
    pub value: Option<f64>,
    pub used: usize,
    pub masked: usize,
}

impl Mape {
    pub fn is_undefined(&self) -> bool {
        self.value.is_none()
    }
}

fn same_len(pred: &[f64], target: &[f64]) -> Result<()> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target has {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("metrics need at least one value".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    let mut s = Sum::default();
    for (p, t) in pred.iter().zip(target) {
        s.add((p - t).abs());
    }
    Ok(s.value() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    same_len(pred, target)?;
    let mut s = Sum::default();
    for (p, t) in pred.iter().zip(target) {
        s.add((p - t) * (p - t));
    }
    Ok((s.value() / pred.len() as f64).sqrt())
}

pub fn mape(pred: &[f64], target: &[f64], eps_mask: f64) -> Result<Mape> {
    same_len(pred, target)?;
    let mut s = Sum::default();
    let mut used = 0;
    for (p, t) in pred.iter().zip(target) {
        if t.abs() > eps_mask {
            s.add((p - t).abs() / t.abs());
            used += 1;
        }
    }
    Ok(Mape {
        value: (used > 0).then(|| 100.0 * s.value() / used as f64),
        used,
        masked: pred.len() - used,
    })
}

/// Streaming accumulator for one forecast step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorAcc {
    pub count: usize,
    pub abs: Sum,
    pub sq: Sum,
    pub pct: Sum,
    pub pct_count: usize,
}

impl ErrorAcc {
    pub fn push(&mut self, p: f64, t: f64, eps_mask: f64) {
        let e = p - t;
        self.count += 1;
        self.abs.add(e.abs());
        self.sq.add(e * e);
        if t.abs() > eps_mask {
            self.pct.add(e.abs() / t.abs());
            self.pct_count += 1;
        }
    }

    pub fn merge(&mut self, o: &ErrorAcc) {
        self.count += o.count;
        self.abs.merge(&o.abs);
        self.sq.merge(&o.sq);
        self.pct.merge(&o.pct);
        self.pct_count += o.pct_count;
    }

    pub fn mae(&self) -> f64 {
        self.abs.value() / self.count as f64
    }

    pub fn rmse(&self) -> f64 {
        (self.sq.value() / self.count as f64).sqrt()
    }

    pub fn mape(&self) -> Mape {
        Mape {
            value: (self.pct_count > 0).then(|| 100.0 * self.pct.value() / self.pct_count as f64),
            used: self.pct_count,
            masked: self.count - self.pct_count,
        }
    }
}
