use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{data_hash, TrainOutcome, TrainRun, Trainer};
use crate::data::EntityRecord;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpace {
    pub hidden: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for GridSpace {
    fn default() -> Self {
        GridSpace {
            hidden: vec![64, 128, 256, 512],
            layers: vec![1, 2, 3],
        }
    }
}

impl GridSpace {
    pub fn configs(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &h in &self.hidden {
            for &l in &self.layers {
                out.push(ModelConfig {
                    hidden_size: h,
                    num_layers: l,
                    ..base.clone()
                });
            }
        }
        out
    }
}

/// Arm counts per rung: each rung keeps the better half (at least one).
pub fn halving_rungs(n: usize) -> Vec<usize> {
    let mut out = vec![n];
    let mut cur = n;
    while cur > 1 {
        cur = (cur / 2).max(1);
        out.push(cur);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RungRecord {
    pub rung: usize,
    /// Cumulative epochs each arm has been trained to at this rung.
    pub epochs: usize,
    /// `(hidden, layers, validation loss)` in rank order.
    pub arms: Vec<(usize, usize, f64)>,
    pub survivors: usize,
}

pub struct ArmResult {
    pub config: ModelConfig,
    pub validation_loss: f64,
    pub num_params: usize,
    /// Rung at which the arm was dropped; `None` for the winner.
    pub eliminated_at: Option<usize>,
    pub outcome: TrainOutcome,
}

pub struct GridResult {
    /// Best first.
    pub ranked: Vec<ArmResult>,
    pub rungs: Vec<RungRecord>,
}

struct Arm {
    config: ModelConfig,
    trainer: Trainer,
}

fn rank(a: (f64, usize, &ModelConfig), b: (f64, usize, &ModelConfig)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then((a.2.hidden_size, a.2.num_layers).cmp(&(b.2.hidden_size, b.2.num_layers)))
}

fn arm_score(arm: &Arm) -> f64 {
    arm.trainer.best_validation().unwrap_or(f64::INFINITY)
}

fn finish_arm(arm: Arm, eliminated_at: Option<usize>, entity: &EntityRecord) -> ArmResult {
    let validation_loss = arm_score(&arm);
    let num_params = arm.trainer.model().params.num_params();
    let mut outcome = arm.trainer.finish();
    outcome.model.meta.data_hash = data_hash(entity);
    ArmResult {
        config: arm.config,
        validation_loss,
        num_params,
        eliminated_at,
        outcome,
    }
}

/// Successive halving over the configuration grid. Rungs train to
/// cumulative budgets `budget / 2^k` ending at the full budget; each rung
/// keeps the better half by best validation loss, ties going to the smaller
/// model. `run.validation_fraction` of 0 is raised to 0.2.
pub fn grid_search(entity: &EntityRecord, space: &GridSpace, run: &TrainRun) -> Result<GridResult> {
    let configs = space.configs(&run.config);
    if configs.is_empty() {
        return Err(Error::Config("empty hyperparameter space".into()));
    }
    if run.budget.epochs == 0 {
        return Err(Error::Config("grid search budget must be positive".into()));
    }
    let mut run = run.clone();
    if run.validation_fraction == 0.0 {
        run.validation_fraction = 0.2;
    }

    let mut arms: Vec<Arm> = configs
        .into_par_iter()
        .map(|config| {
            let mut r = run.clone();
            r.config = config.clone();
            Ok(Arm {
                trainer: Trainer::for_entity(entity, &r)?,
                config,
            })
        })
        .collect::<Result<_>>()?;

    let counts = halving_rungs(arms.len());
    let training_rungs = counts.len().saturating_sub(1).max(1);
    let mut done: Vec<ArmResult> = Vec::new();
    let mut rungs = Vec::new();
    for r in 0..training_rungs {
        let shift = (training_rungs - 1 - r) as u32;
        let epochs = run.budget.epochs.div_ceil(1usize << shift.min(63)).max(1);
        arms.par_iter_mut().for_each(|a| a.trainer.run_until(epochs));
        arms.sort_by(|a, b| {
            rank(
                (arm_score(a), a.trainer.model().params.num_params(), &a.config),
                (arm_score(b), b.trainer.model().params.num_params(), &b.config),
            )
        });
        let survivors = counts.get(r + 1).copied().unwrap_or(1);
        rungs.push(RungRecord {
            rung: r,
            epochs,
            arms: arms
                .iter()
                .map(|a| (a.config.hidden_size, a.config.num_layers, arm_score(a)))
                .collect(),
            survivors,
        });
        let dropped: Vec<Arm> = arms.split_off(survivors);
        let mut dropped: Vec<ArmResult> = dropped
            .into_iter()
            .map(|a| finish_arm(a, Some(r), entity))
            .collect();
        dropped.append(&mut done);
        done = dropped;
    }
    let mut ranked: Vec<ArmResult> = arms.into_iter().map(|a| finish_arm(a, None, entity)).collect();
    ranked.append(&mut done);
    Ok(GridResult { ranked, rungs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{CaseSeries, EntityKey};
    use crate::losses::{LossKind, LossSpec};
    use crate::training::{Budget, WindowSpec};
    use chrono::NaiveDate;

    fn entity() -> EntityRecord {
        let key = EntityKey::from_parts(39, 35).unwrap();
        let f = |t: usize, k: f64| k / (1.0 + (-0.12 * (t as f64 - 40.0)).exp());
        EntityRecord {
            key: key.clone(),
            name: None,
            statics: vec![],
            series: CaseSeries {
                key,
                start_date: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
                infections: (0..75).map(|t| f(t, 0.3)).collect(),
                deaths: (0..75).map(|t| f(t, 0.01)).collect(),
                population: Some(1000),
                normalized: true,
            },
        }
    }

    fn run(epochs: usize) -> TrainRun {
        let mut r = TrainRun::new(
            ModelConfig::new(4, 1, 2, 6, 0, 5),
            LossSpec::new(LossKind::MseAbs),
            WindowSpec { window_len: 7, offsets: vec![1, 3, 5] },
        );
        r.budget = Budget::epochs(epochs);
        r.adam.learning_rate = 1e-2;
        r
    }

    #[test]
    fn rung_counts() {
        assert_eq!(halving_rungs(12), vec![12, 6, 3, 1]);
        assert_eq!(halving_rungs(1), vec![1]);
        assert_eq!(halving_rungs(2), vec![2, 1]);
        assert_eq!(halving_rungs(5), vec![5, 2, 1]);
    }

    #[test]
    fn single_config_matches_plain_training() {
        let space = GridSpace { hidden: vec![4], layers: vec![1] };
        let mut r = run(6);
        r.validation_fraction = 0.2;
        let g = grid_search(&entity(), &space, &r).unwrap();
        assert_eq!(g.ranked.len(), 1);
        let plain = super::super::train_model(&entity(), &r).unwrap();
        assert_eq!(g.ranked[0].outcome.history, plain.history);
        assert_eq!(g.ranked[0].outcome.model.params, plain.model.params);
    }

    #[test]
    fn twelve_arms_halve_and_rank_deterministically() {
        let space = GridSpace { hidden: vec![2, 3, 4, 5], layers: vec![1, 2, 3] };
        let a = grid_search(&entity(), &space, &run(8)).unwrap();
        let survivors: Vec<usize> = a.rungs.iter().map(|r| r.survivors).collect();
        assert_eq!(survivors, vec![6, 3, 1]);
        let epochs: Vec<usize> = a.rungs.iter().map(|r| r.epochs).collect();
        assert_eq!(epochs, vec![2, 4, 8]);
        assert_eq!(a.ranked.len(), 12);
        assert!(a.ranked[0].eliminated_at.is_none());

        // The winner beats every arm at the rung that dropped it.
        let best = a.ranked[0].validation_loss;
        for arm in &a.ranked[1..] {
            assert!(best <= arm.validation_loss, "{best} > {}", arm.validation_loss);
        }

        let b = grid_search(&entity(), &space, &run(8)).unwrap();
        let key = |g: &GridResult| {
            g.ranked
                .iter()
                .map(|r| (r.config.hidden_size, r.config.num_layers, r.validation_loss.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(key(&a), key(&b));
    }

    #[test]
    fn empty_space_is_a_config_error() {
        let space = GridSpace { hidden: vec![], layers: vec![1] };
        assert!(matches!(grid_search(&entity(), &space, &run(4)), Err(Error::Config(_))));
    }
}
