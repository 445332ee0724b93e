//! Client-count sweeps at a fixed compute budget.
//!
//! A sweep trains one run per (K, seed) for `threshold_rounds` rounds. The
//! K = 1 run is the non-federated baseline: its test accuracy at
//! `baseline_rounds` defines both the fixed-budget reference and the target
//! `target_fraction × baseline` that every run is timed against. Runs that
//! never reach the target inside the threshold window are failures, as are
//! runs whose parameters go non-finite (flagged separately).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedavg::{run_training, FedConfig, RoundRecord};
use crate::model::{Example, ModelSpec};

pub const DEFAULT_CLIENT_COUNTS: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const DEFAULT_TARGET_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub task: String,
    pub model: ModelSpec,
    /// Strictly increasing, starting at 1.
    pub client_counts: Vec<usize>,
    /// Fixed compute budget.
    pub baseline_rounds: usize,
    /// Second budget for rounds-to-target; `≥ baseline_rounds`.
    pub threshold_rounds: usize,
    pub target_fraction: f64,
    /// `num_clients`, `rounds` and `seed` are overridden per run.
    pub base: FedConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    /// Plan with 100/200-round budgets, K ∈ {1,…,32} and a 0.9 target.
    pub fn new(task: impl Into<String>, model: ModelSpec, base: FedConfig) -> Self {
        let seeds = vec![base.seed];
        Self {
            task: task.into(),
            model,
            client_counts: DEFAULT_CLIENT_COUNTS.to_vec(),
            baseline_rounds: 100,
            threshold_rounds: 200,
            target_fraction: DEFAULT_TARGET_FRACTION,
            base,
            seeds,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.base.validate()?;
        if self.client_counts.first() != Some(&1) {
            return Err(Error::config(
                "client counts must start with 1 (the non-federated baseline)",
            ));
        }
        if self.client_counts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("client counts must be strictly increasing"));
        }
        if self.baseline_rounds == 0 {
            return Err(Error::config("baseline_rounds must be positive"));
        }
        if self.threshold_rounds < self.baseline_rounds {
            return Err(Error::config(format!(
                "threshold_rounds ({}) must be >= baseline_rounds ({})",
                self.threshold_rounds, self.baseline_rounds
            )));
        }
        if !(self.target_fraction > 0.0 && self.target_fraction <= 1.0) {
            return Err(Error::config(format!(
                "target_fraction must lie in (0, 1], got {}",
                self.target_fraction
            )));
        }
        if !self.baseline_rounds.is_multiple_of(self.base.eval_every) {
            return Err(Error::config("baseline_rounds must be a multiple of eval_every"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("a plan needs at least one seed"));
        }
        Ok(())
    }

    fn config_for(&self, num_clients: usize, rounds: usize, seed: u64) -> FedConfig {
        FedConfig {
            num_clients,
            rounds,
            seed,
            ..self.base.clone()
        }
    }
}

/// Rounds-to-target result: the first qualifying round, or a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetOutcome {
    Reached(usize),
    Failure,
}

impl TargetOutcome {
    pub fn round(self) -> Option<usize> {
        match self {
            TargetOutcome::Reached(r) => Some(r),
            TargetOutcome::Failure => None,
        }
    }

    pub fn is_failure(self) -> bool {
        self == TargetOutcome::Failure
    }
}

/// Smallest round whose test accuracy is at least `target`.
pub fn rounds_to_target(curve: &[RoundRecord], target: f64) -> TargetOutcome {
    curve
        .iter()
        .find(|r| r.test_accuracy >= target)
        .map_or(TargetOutcome::Failure, |r| TargetOutcome::Reached(r.round))
}

/// Expected accuracy of uniform random guessing over `num_classes` classes.
pub fn random_baseline(num_classes: usize) -> f64 {
    assert!(num_classes >= 2, "random baseline needs at least 2 classes");
    1.0 / num_classes as f64
}

fn accuracy_at(curve: &[RoundRecord], round: usize) -> Option<f64> {
    curve.iter().find(|r| r.round == round).map(|r| r.test_accuracy)
}

/// Runs the K = 1 baseline for `baseline_rounds` with the plan's base seed.
/// Returns the curve and the accuracy at the final budgeted round.
pub fn run_baseline(plan: &ExperimentPlan, train: &[Example], test: &[Example]) -> Result<(Vec<RoundRecord>, f64)> {
    plan.validate()?;
    let cfg = plan.config_for(1, plan.baseline_rounds, plan.base.seed);
    let run = run_training(&plan.model, train, test, &cfg)?;
    if let Some(round) = run.diverged_at {
        return Err(Error::Diverged { round });
    }
    let acc =
        accuracy_at(&run.records, plan.baseline_rounds).expect("validated plan evaluates the final baseline round");
    Ok((run.records, acc))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub num_clients: usize,
    pub seed: u64,
    /// Test accuracy at `baseline_rounds`; `None` if the run diverged first.
    pub accuracy_at_budget: Option<f64>,
    pub rounds_to_target: TargetOutcome,
    pub diverged: bool,
    pub curve: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub seed: u64,
    /// `None` when the baseline itself diverged.
    pub accuracy: Option<f64>,
    pub target: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub task: String,
    pub model: String,
    pub num_classes: usize,
    pub random_baseline: f64,
    pub baseline_rounds: usize,
    pub threshold_rounds: usize,
    pub target_fraction: f64,
    pub baselines: Vec<BaselineEntry>,
    /// Ordered by (K, seed).
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn rows_for_seed(&self, seed: u64) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.seed == seed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config(e.to_string()))
    }
}

/// Trains every (K, seed) of the plan to `threshold_rounds` and scores it.
pub fn client_sweep(plan: &ExperimentPlan, train: &[Example], test: &[Example]) -> Result<SweepReport> {
    plan.validate()?;
    let jobs: Vec<(usize, u64)> = plan
        .client_counts
        .iter()
        .flat_map(|&k| plan.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, seed)| {
            run_training(
                &plan.model,
                train,
                test,
                &plan.config_for(k, plan.threshold_rounds, seed),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let baselines: Vec<BaselineEntry> = plan
        .seeds
        .iter()
        .map(|&seed| {
            let (_, run) = jobs
                .iter()
                .zip(&runs)
                .find(|((k, s), _)| *k == 1 && *s == seed)
                .expect("plan always contains K = 1");
            let accuracy = if run.diverged() {
                None
            } else {
                accuracy_at(&run.records, plan.baseline_rounds)
            };
            BaselineEntry {
                seed,
                accuracy,
                target: accuracy.map(|a| plan.target_fraction * a),
            }
        })
        .collect();

    let rows = jobs
        .into_iter()
        .zip(runs)
        .map(|((k, seed), run)| {
            let target = baselines.iter().find(|b| b.seed == seed).and_then(|b| b.target);
            let diverged = run.diverged();
            let rounds_to = match target {
                Some(t) if !diverged => rounds_to_target(&run.records, t),
                _ => TargetOutcome::Failure,
            };
            SweepRow {
                num_clients: k,
                seed,
                accuracy_at_budget: accuracy_at(&run.records, plan.baseline_rounds),
                rounds_to_target: rounds_to,
                diverged,
                curve: run.records,
            }
        })
        .collect();

    Ok(SweepReport {
        task: plan.task.clone(),
        model: plan.model.kind_name().to_string(),
        num_classes: plan.model.num_classes(),
        random_baseline: random_baseline(plan.model.num_classes()),
        baseline_rounds: plan.baseline_rounds,
        threshold_rounds: plan.threshold_rounds,
        target_fraction: plan.target_fraction,
        baselines,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(acc: &[f64]) -> Vec<RoundRecord> {
        acc.iter()
            .enumerate()
            .map(|(i, &a)| RoundRecord {
                round: i + 1,
                test_accuracy: a,
                test_loss: 1.0,
                train_loss: 1.0,
                wall_seconds: 0.0,
            })
            .collect()
    }

    #[test]
    fn first_crossing() {
        assert_eq!(
            rounds_to_target(&curve(&[0.30, 0.50, 0.80, 0.85]), 0.80),
            TargetOutcome::Reached(3)
        );
        assert_eq!(rounds_to_target(&curve(&[0.30, 0.40]), 0.80), TargetOutcome::Failure);
        let target = 0.9 * 0.90;
        assert!((target - 0.81f64).abs() < 1e-15);
        assert_eq!(rounds_to_target(&curve(&[0.70, 0.81]), 0.81), TargetOutcome::Reached(2));
    }

    #[test]
    fn random_baseline_values() {
        assert_eq!(random_baseline(2), 0.5);
        assert_eq!(random_baseline(4), 0.25);
        assert_eq!(random_baseline(5), 0.2);
    }

    #[test]
    fn plan_validation() {
        let base = FedConfig::new(1, 0.1, 1, 0);
        let mut plan = ExperimentPlan::new("t", ModelSpec::softmax_regression(2, 8), base);
        assert!(plan.validate().is_ok());
        plan.client_counts = vec![2, 4];
        assert!(plan.validate().is_err());
        plan.client_counts = vec![1, 4, 4];
        assert!(plan.validate().is_err());
        plan.client_counts = vec![1, 2];
        plan.threshold_rounds = 50;
        assert!(plan.validate().is_err());
        plan.threshold_rounds = 200;
        plan.target_fraction = 1.5;
        assert!(plan.validate().is_err());
    }
}
