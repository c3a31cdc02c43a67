//! Dense-window evaluation in raw units.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::metrics::{ErrorAcc, MAPE_EPS};
use super::report::{check_horizons, MetricsReport, ReportMeta, DEFAULT_HORIZONS};
use crate::compute::Tensor;
use crate::data::{make_windows, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::model::{Arch, ForecastModel};
use crate::par;

pub const NORMALIZATION_NOTE: &str =
    "per-entity z-score fit on the training segment after the scenario; unseen entities use pooled statistics";

/// How entity columns reach a slot-bound (`featmlp`) model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Columns are fed positionally; an entity-count mismatch is an error.
    #[default]
    Strict,
    /// Known entities keep their training slot, vacated slots see zeros and
    /// unseen entities borrow vacated slots (or, in extra passes, the
    /// leading slots).
    SlotReuse,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Strict => "strict",
            Protocol::SlotReuse => "slot-reuse",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(Protocol::Strict),
            "slot-reuse" => Ok(Protocol::SlotReuse),
            o => Err(Error::config("protocol", format!("unknown protocol `{o}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub horizons: Vec<usize>,
    pub batch_size: usize,
    pub stride: usize,
    pub protocol: Protocol,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            horizons: DEFAULT_HORIZONS.to_vec(),
            batch_size: 64,
            stride: 1,
            protocol: Protocol::Strict,
        }
    }
}

/// One forward pass: the test column shown in each model slot and the
/// `(slot, column)` pairs whose forecasts are kept.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotPass {
    pub slots: Vec<Option<usize>>,
    pub read: Vec<(usize, usize)>,
}

pub fn slot_passes(train_ids: &[String], test_ids: &[String]) -> Vec<SlotPass> {
    let width = train_ids.len();
    let slot_of: HashMap<&str, usize> = train_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut base = vec![None; width];
    let mut unseen = Vec::new();
    for (col, id) in test_ids.iter().enumerate() {
        match slot_of.get(id.as_str()) {
            Some(&s) => base[s] = Some(col),
            None => unseen.push(col),
        }
    }
    let mut unseen = unseen.into_iter();
    for slot in base.iter_mut().filter(|s| s.is_none()) {
        match unseen.next() {
            Some(col) => *slot = Some(col),
            None => break,
        }
    }
    let rest: Vec<usize> = unseen.collect();
    let read = |slots: &[Option<usize>], which: &mut dyn Iterator<Item = usize>| {
        which
            .filter_map(|s| slots[s].map(|c| (s, c)))
            .collect::<Vec<_>>()
    };
    let mut passes = vec![SlotPass {
        read: read(&base, &mut (0..width)),
        slots: base.clone(),
    }];
    for chunk in rest.chunks(width.max(1)) {
        let mut slots = base.clone();
        for (s, &col) in chunk.iter().enumerate() {
            slots[s] = Some(col);
        }
        passes.push(SlotPass {
            read: read(&slots, &mut (0..chunk.len())),
            slots,
        });
    }
    passes
}

/// Per-step error accumulators of `model` over stride windows of `raw`.
///
/// Inputs are normalized with `norm`, forecasts de-normalized before
/// scoring against the raw targets. Batches run in parallel and are merged
/// in window order.
pub fn score_segment(
    model: &ForecastModel,
    norm: &NormStats,
    raw: &Dataset,
    train_ids: &[String],
    opts: &EvalOptions,
) -> Result<(Vec<ErrorAcc>, usize)> {
    let cfg = &model.config;
    if raw.channels() != cfg.channels {
        return Err(Error::Checkpoint(format!(
            "model expects {} channels, data has {}",
            cfg.channels,
            raw.channels()
        )));
    }
    let (t_hist, f, n, c) = (
        cfg.history_len,
        cfg.forecast_len,
        raw.num_entities(),
        raw.channels(),
    );
    let aligned = norm.align(raw.entity_ids());
    let mut z = raw.values().to_vec();
    aligned.normalize(&mut z);
    let normalized = raw.with_values(z)?;
    let windows = make_windows(&normalized, t_hist, f, opts.stride.max(1), None)?;
    if windows.is_empty() {
        return Err(Error::Split(format!(
            "segment of {} steps is shorter than history {t_hist} + horizon {f}",
            raw.steps()
        )));
    }
    let passes = if cfg.arch == Arch::FeatMlp && opts.protocol == Protocol::SlotReuse {
        slot_passes(train_ids, raw.entity_ids())
    } else {
        vec![SlotPass {
            slots: (0..n).map(Some).collect(),
            read: (0..n).map(|i| (i, i)).collect(),
        }]
    };
    let identity = passes.len() == 1
        && passes[0]
            .slots
            .iter()
            .enumerate()
            .all(|(s, c)| *c == Some(s));
    let ranges: Vec<_> = windows.chunks(opts.batch_size.max(1)).collect();
    let vals = raw.values();
    let parts: Vec<Result<Vec<ErrorAcc>>> = par::map(&ranges, |range| {
        let batch = windows.batch(range.clone())?;
        let b = batch.starts.len();
        let mut pred = vec![0.0; b * f * n * c];
        for pass in &passes {
            let x = if identity {
                batch.inputs.clone()
            } else {
                remap(&batch.inputs, &pass.slots, n)?
            };
            let y = model.predict(&x)?;
            let w = pass.slots.len();
            let yd = y.data();
            for bi in 0..b {
                for s in 0..f {
                    for &(slot, col) in &pass.read {
                        let src = ((bi * f + s) * w + slot) * c;
                        let dst = ((bi * f + s) * n + col) * c;
                        pred[dst..dst + c].copy_from_slice(&yd[src..src + c]);
                    }
                }
            }
        }
        aligned.denormalize(&mut pred);
        let mut acc = vec![ErrorAcc::default(); f];
        let row = n * c;
        for (bi, &start) in batch.starts.iter().enumerate() {
            for (s, a) in acc.iter_mut().enumerate() {
                let truth = &vals[(start + t_hist + s) * row..(start + t_hist + s + 1) * row];
                let p = &pred[(bi * f + s) * row..(bi * f + s + 1) * row];
                for (pv, tv) in p.iter().zip(truth) {
                    a.push(*pv, *tv, MAPE_EPS);
                }
            }
        }
        Ok(acc)
    });
    let mut total = vec![ErrorAcc::default(); f];
    for part in parts {
        for (t, a) in total.iter_mut().zip(part?) {
            t.merge(&a);
        }
    }
    Ok((total, windows.len()))
}

/// `[B, T, N, C]` columns → `[B, T, W, C]` slots, zeros where unassigned.
fn remap(x: &Tensor, slots: &[Option<usize>], n: usize) -> Result<Tensor> {
    let s = x.shape();
    let (b, t, c) = (s[0], s[1], s[3]);
    let w = slots.len();
    let src = x.data();
    let mut out = vec![0.0; b * t * w * c];
    for bt in 0..b * t {
        for (slot, col) in slots.iter().enumerate() {
            if let Some(col) = col {
                let from = (bt * n + col) * c;
                let to = (bt * w + slot) * c;
                out[to..to + c].copy_from_slice(&src[from..from + c]);
            }
        }
    }
    Tensor::new(vec![b, t, w, c], out)
}

pub fn report_meta(ckpt: &Checkpoint, test: &Dataset, protocol: Protocol) -> ReportMeta {
    let train: HashSet<&str> = ckpt
        .meta
        .train_entities
        .iter()
        .map(String::as_str)
        .collect();
    let test_ids: HashSet<&str> = test.entity_ids().iter().map(String::as_str).collect();
    ReportMeta {
        arch: ckpt.model.config.arch.to_string(),
        scenario: Some(ckpt.meta.scenario.clone()),
        protocol: protocol.as_str().into(),
        train_entities: train.len(),
        test_entities: test_ids.len(),
        new_entities: test_ids.difference(&train).count(),
        removed_entities: train.difference(&test_ids).count(),
        normalization: NORMALIZATION_NOTE.into(),
    }
}

/// Scores `ckpt` on the raw `test` segment.
pub fn evaluate(ckpt: &Checkpoint, test: &Dataset, opts: &EvalOptions) -> Result<MetricsReport> {
    check_horizons(&opts.horizons, ckpt.model.config.forecast_len)?;
    let (steps, samples) = score_segment(
        &ckpt.model,
        &ckpt.norm,
        test,
        &ckpt.meta.train_entities,
        opts,
    )?;
    MetricsReport::from_steps(
        &steps,
        &opts.horizons,
        samples,
        report_meta(ckpt, test, opts.protocol),
    )
}

/// Like [`evaluate`] but turns an entity-count mismatch into a failed
/// report instead of an error.
pub fn evaluate_or_report(
    ckpt: &Checkpoint,
    test: &Dataset,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    match evaluate(ckpt, test, opts) {
        Err(e @ Error::Inductiveness { .. }) => Ok(MetricsReport::failed(
            ckpt.model.config.forecast_len,
            &opts.horizons,
            report_meta(ckpt, test, opts.protocol),
            e.to_string(),
        )),
        other => other,
    }
}
