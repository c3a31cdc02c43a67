//! Entity-set perturbations between training and test.
//!
//! * 0: unchanged.
//! * 1: a seeded fraction of entities is withheld from training (new at test).
//! * 2: a seeded fraction of training entities is removed from test.
//! * 3: both, on disjoint subsets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub fraction: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            scenario: 0,
            fraction: 0.1,
            seed: 0,
        }
    }
}

/// Resolved entity indices (into the shared universe) kept on each side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub train_keep: Vec<usize>,
    pub test_keep: Vec<usize>,
    /// Ids present at test but never seen in training.
    pub new_ids: Vec<String>,
    /// Ids seen in training but absent at test.
    pub removed_ids: Vec<String>,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, fraction: f64, seed: u64) -> Self {
        ScenarioSpec {
            scenario,
            fraction,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario > 3 {
            return Err(Error::config(
                "scenario",
                format!("{} not in 0..=3", self.scenario),
            ));
        }
        if !(0.0..=0.5).contains(&self.fraction) {
            return Err(Error::config(
                "fraction",
                format!("out of range [0, 0.5], got {}", self.fraction),
            ));
        }
        Ok(())
    }

    pub fn plan(&self, ids: &[String]) -> Result<ScenarioPlan> {
        self.validate()?;
        let n = ids.len();
        let all: Vec<usize> = (0..n).collect();
        if self.scenario == 0 {
            return Ok(ScenarioPlan {
                train_keep: all.clone(),
                test_keep: all,
                new_ids: vec![],
                removed_ids: vec![],
            });
        }
        let k = (self.fraction * n as f64).round() as usize;
        let needed = if self.scenario == 3 { 2 * k } else { k };
        if needed > n {
            return Err(Error::config(
                "fraction",
                format!("cannot draw {needed} disjoint entities from {n}"),
            ));
        }
        let mut order = all.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let (withheld, removed): (&[usize], &[usize]) = match self.scenario {
            1 => (&order[..k], &[]),
            2 => (&[], &order[..k]),
            _ => (&order[..k], &order[k..2 * k]),
        };
        let keep = |drop: &[usize]| -> Vec<usize> {
            all.iter().copied().filter(|i| !drop.contains(i)).collect()
        };
        let mut new_ids: Vec<String> = withheld.iter().map(|&i| ids[i].clone()).collect();
        let mut removed_ids: Vec<String> = removed.iter().map(|&i| ids[i].clone()).collect();
        new_ids.sort();
        removed_ids.sort();
        Ok(ScenarioPlan {
            train_keep: keep(withheld),
            test_keep: keep(removed),
            new_ids,
            removed_ids,
        })
    }
}

/// Returns `(train', test', plan)`. Retained columns are copied bitwise.
pub fn apply_scenario(
    train: &Dataset,
    test: &Dataset,
    spec: &ScenarioSpec,
) -> Result<(Dataset, Dataset, ScenarioPlan)> {
    if train.entity_ids() != test.entity_ids() {
        return Err(Error::Contract(
            "train and test must share one entity universe before a scenario".into(),
        ));
    }
    let plan = spec.plan(train.entity_ids())?;
    if plan.train_keep.is_empty() || plan.test_keep.is_empty() {
        return Err(Error::config("fraction", "scenario leaves no entities"));
    }
    let tr = train.select_entities(&plan.train_keep)?;
    let te = test.select_entities(&plan.test_keep)?;
    Ok((tr, te, plan))
}
