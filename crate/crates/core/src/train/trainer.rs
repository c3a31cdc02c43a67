//! Mini-batch training with validation early stopping.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RunMeta};
use super::eval::{score_segment, EvalOptions};
use crate::compute::{AdamConfig, AdamState, ParamStore, Tape};
use crate::data::{
    apply_scenario, chrono_split, gen_synthetic, load_dataset, make_windows, Dataset, NormStats,
    ScenarioPlan, ScenarioSpec, SynthConfig, DEFAULT_RATIOS,
};
use crate::error::{Error, Result};
use crate::model::{Arch, ForecastModel, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Dir { path: PathBuf },
    Synthetic(SynthConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    pub grad_clip: Option<f64>,
    /// Window stride over the training segment.
    pub train_stride: usize,
    /// Stop after this many optimizer steps, whatever the epoch.
    pub max_steps: Option<usize>,
    pub eval_batch: usize,
    pub split: [f64; 3],
    pub scenario: ScenarioSpec,
    /// `channels` and, for `featmlp`, `featmlp_entities` are resolved from
    /// the data when training starts.
    pub model: ModelConfig,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: 10,
            seed: 0,
            grad_clip: Some(5.0),
            train_stride: 1,
            max_steps: None,
            eval_batch: 64,
            split: DEFAULT_RATIOS,
            scenario: ScenarioSpec::default(),
            model: ModelConfig::default(),
            data: DataSource::Synthetic(SynthConfig::default()),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it is the optimizer's fixed point.
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs", "must be at least 1"));
        }
        if self.train_stride == 0 || self.eval_batch == 0 {
            return Err(Error::config(
                "train_stride",
                "strides and batch sizes must be positive",
            ));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("grad_clip", "must be positive"));
            }
        }
        self.scenario.validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        let mut m = self.model.clone();
        if m.arch == Arch::FeatMlp && m.featmlp_entities.is_none() {
            m.featmlp_entities = Some(1);
        }
        m.validate()
    }

    /// Training-loop seed derived from the run seed.
    fn order_seed(&self) -> u64 {
        self.seed ^ 0x9e37_79b9_7f4a_7c15
    }
}

/// Raw segments after the split and the scenario, plus the fitted
/// normalizer.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    /// Restricted to the training entities.
    pub val: Dataset,
    pub test: Dataset,
    pub plan: ScenarioPlan,
    pub norm: NormStats,
}

pub fn load_source(src: &DataSource) -> Result<Dataset> {
    match src {
        DataSource::Dir { path } => load_dataset(path),
        DataSource::Synthetic(s) => gen_synthetic(s),
    }
}

pub fn prepare(cfg: &TrainConfig) -> Result<Prepared> {
    prepare_from(cfg, &load_source(&cfg.data)?)
}

pub fn prepare_from(cfg: &TrainConfig, data: &Dataset) -> Result<Prepared> {
    let min = cfg.model.history_len + cfg.model.forecast_len;
    let (train, val, test) = chrono_split(data, cfg.split, min)?;
    let (train, test, plan) = apply_scenario(&train, &test, &cfg.scenario)?;
    let val = val.select_entities(&plan.train_keep)?;
    let norm = NormStats::fit(&train);
    Ok(Prepared {
        train,
        val,
        test,
        plan,
        norm,
    })
}

/// The model configuration as it will be built for `data`.
pub fn resolve_model(cfg: &ModelConfig, train: &Dataset) -> Result<ModelConfig> {
    let mut m = cfg.clone();
    m.channels = train.channels();
    if m.arch == Arch::FeatMlp {
        match m.featmlp_entities {
            None => m.featmlp_entities = Some(train.num_entities()),
            Some(w) if w != train.num_entities() => {
                return Err(Error::Inductiveness {
                    expected: w,
                    actual: train.num_entities(),
                })
            }
            Some(_) => {}
        }
    }
    m.validate()?;
    Ok(m)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub best_val_mae: f64,
    pub improved: bool,
}

pub fn log_to_jsonl(log: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for r in log {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
    pub prepared: Prepared,
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let (checkpoint, log) = train_prepared(cfg, &prepared)?;
    Ok(TrainOutcome {
        checkpoint,
        log,
        prepared,
    })
}

fn param_norms(store: &ParamStore) -> String {
    store
        .iter()
        .map(|p| {
            let n = p.value.data().iter().map(|v| v * v).sum::<f64>().sqrt();
            format!("{}={n:.4e}", p.name)
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train_prepared(
    cfg: &TrainConfig,
    prep: &Prepared,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    cfg.validate()?;
    let mcfg = resolve_model(&cfg.model, &prep.train)?;
    let (t_hist, f) = (mcfg.history_len, mcfg.forecast_len);
    let mut model = ForecastModel::new(mcfg)?;
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let train_ids = prep.train.entity_ids().to_vec();
    let normalized = prep.norm.apply(&prep.train)?;
    let windows = make_windows(&normalized, t_hist, f, cfg.train_stride, None)?;
    if windows.is_empty() {
        return Err(Error::Split("training segment yields no windows".into()));
    }
    let val_opts = EvalOptions {
        batch_size: cfg.eval_batch,
        ..EvalOptions::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.order_seed());
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut log = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0;
    let mut steps = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        let mut capped = false;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let starts: Vec<usize> = chunk.iter().map(|&i| windows.starts()[i]).collect();
            let batch = windows.batch_of(&starts)?;
            let mut tape = Tape::new();
            let x = tape.input(batch.inputs);
            let y = model.forward_with(&mut tape, &model.params, x)?;
            let loss = tape.mean_abs_diff(y, &batch.targets)?;
            let lv = tape.value(loss).item().unwrap_or(f64::NAN);
            if !lv.is_finite() {
                return Err(Error::NanLoss {
                    epoch,
                    batch: bi,
                    loss: lv,
                    norms: param_norms(&model.params),
                });
            }
            tape.backward(loss, &mut model.params)?;
            if let Some(c) = cfg.grad_clip {
                model.params.clip_grad_norm(c);
            }
            adam.step(&mut model.params)?;
            loss_sum += lv;
            batches += 1;
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                capped = true;
                break;
            }
        }
        let (acc, _) = score_segment(&model, &prep.norm, &prep.val, &train_ids, &val_opts)?;
        let val_mae = acc.iter().map(|a| a.mae()).sum::<f64>() / acc.len() as f64;
        if !val_mae.is_finite() {
            return Err(Error::NanLoss {
                epoch,
                batch: batches,
                loss: val_mae,
                norms: param_norms(&model.params),
            });
        }
        let improved = val_mae < best.0;
        if improved {
            best = (val_mae, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        log.push(EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / batches as f64,
            val_mae,
            best_val_mae: best.0,
            improved,
        });
        if stale >= cfg.patience || capped {
            break;
        }
    }
    let (best_val_mae, best_epoch, best_params) = best;
    model.params = best_params;
    model.params.clear_grads();
    let meta = RunMeta {
        epochs_run: log.len(),
        best_epoch,
        best_val_mae,
        optimizer_steps: steps,
        seed: cfg.seed,
        scenario: cfg.scenario.clone(),
        train_entities: train_ids,
        new_ids: prep.plan.new_ids.clone(),
        removed_ids: prep.plan.removed_ids.clone(),
    };
    Ok((
        Checkpoint {
            model,
            norm: prep.norm.clone(),
            meta,
        },
        log,
    ))
}
