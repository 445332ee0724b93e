//! Synchronous federated averaging.
//!
//! Each round broadcasts the global parameters to every client, runs local
//! mini-batch SGD on each client's shard, and replaces the global parameters
//! with the shard-size-weighted mean of the client results. Clients may train
//! on any number of threads (the ambient rayon pool); results are gathered and
//! aggregated in ascending client order, so a run is bitwise reproducible for
//! any executor width.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{partition_iid, Shard};
use crate::error::{Error, Result};
use crate::model::{self, Batch, Example, ModelSpec};
use crate::params::ParameterVector;
use crate::rng;

/// Learning rate used for fine-tuning large pre-trained encoders. Kept for
/// reference; desk-scale models default to [`default_learning_rate`].
pub const PRETRAINED_FINETUNE_LEARNING_RATE: f64 = 2e-5;
pub const DEFAULT_LOCAL_EPOCHS: usize = 2;
pub const DEFAULT_BATCH_SIZE: usize = 32;

pub fn default_learning_rate(spec: &ModelSpec) -> f64 {
    match spec {
        ModelSpec::SoftmaxRegression(_) => 0.1,
        ModelSpec::TinyTransformer(_) => 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    /// K
    pub num_clients: usize,
    /// E
    pub local_epochs: usize,
    /// B
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rounds: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl FedConfig {
    pub fn new(num_clients: usize, learning_rate: f64, rounds: usize, seed: u64) -> Self {
        Self {
            num_clients,
            local_epochs: DEFAULT_LOCAL_EPOCHS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate,
            rounds,
            seed,
            eval_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_clients", self.num_clients),
            ("local_epochs", self.local_epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Seed of client `k`'s RNG in `round` (1-based).
    pub fn client_seed(&self, client: usize, round: usize) -> u64 {
        rng::mix_seed(self.seed, client as u64, round as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientState {
    pub index: usize,
    pub shard: Shard,
}

impl ClientState {
    pub fn from_shards(shards: Vec<Shard>) -> Vec<Self> {
        shards
            .into_iter()
            .map(|shard| ClientState {
                index: shard.owner,
                shard,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ParameterVector,
    /// nₖ, the aggregation weight.
    pub num_samples: usize,
    /// Mean of the mini-batch losses seen during local training.
    pub mean_loss: f64,
    pub steps: usize,
}

/// Metrics of one evaluated round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub test_accuracy: f64,
    pub test_loss: f64,
    /// Mean over clients of each client's mean mini-batch loss.
    pub train_loss: f64,
    pub wall_seconds: f64,
}

/// `epochs` passes of mini-batch SGD over one client's shard.
///
/// Every epoch reshuffles the shard with the client RNG and walks contiguous
/// mini-batches of `batch_size`, keeping the final partial batch.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    spec: &ModelSpec,
    params: &ParameterVector,
    shard: &Shard,
    examples: &[Example],
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    if shard.is_empty() {
        return Err(Error::usage(format!("client {} has an empty shard", shard.owner)));
    }
    if batch_size == 0 {
        return Err(Error::usage("batch size must be positive"));
    }
    if let Some(&bad) = shard.indices.iter().find(|&&i| i >= examples.len()) {
        return Err(Error::usage(format!(
            "shard index {bad} outside a dataset of {}",
            examples.len()
        )));
    }
    params.check_dim(spec.num_params())?;

    let mut theta = params.clone();
    let mut rng = rng::seeded(rng_seed);
    let mut order = shard.indices.clone();
    let mut loss_sum = 0.0;
    let mut steps = 0;
    for _ in 0..epochs {
        rng::fisher_yates(&mut order, &mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = Batch::new(chunk.iter().map(|&i| &examples[i]).collect())?;
            let (l, g) = model::loss_and_gradient(spec, &theta, &batch)?;
            theta.sgd_step(&g, learning_rate)?;
            loss_sum += l;
            steps += 1;
        }
    }
    Ok(LocalUpdate {
        params: theta,
        num_samples: shard.len(),
        mean_loss: if steps > 0 { loss_sum / steps as f64 } else { 0.0 },
        steps,
    })
}

/// Shard-size-weighted mean `Σₖ (nₖ / Σⱼ nⱼ) · θₖ`.
///
/// Evaluated as `θ₁ + Σₖ wₖ (θₖ − θ₁)` with k ascending, so identical inputs
/// come back bitwise unchanged, then clamped to the per-coordinate range of
/// the inputs to absorb rounding.
pub fn aggregate(updates: &[(ParameterVector, usize)]) -> Result<ParameterVector> {
    let Some((first, _)) = updates.first() else {
        return Err(Error::usage("aggregate needs at least one client update"));
    };
    let dim = first.dim();
    for (p, n) in updates {
        p.check_dim(dim)?;
        if *n == 0 {
            return Err(Error::usage("client update with zero samples"));
        }
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    let total = total as f64;
    let base = first.as_slice();
    let mut out = base.to_vec();
    let mut lo = base.to_vec();
    let mut hi = base.to_vec();
    for (p, n) in updates {
        let w = *n as f64 / total;
        for (i, &v) in p.as_slice().iter().enumerate() {
            out[i] += w * (v - base[i]);
            lo[i] = lo[i].min(v);
            hi[i] = hi[i].max(v);
        }
    }
    for i in 0..dim {
        // all-NaN coordinates have no range to clamp to
        if lo[i] <= hi[i] {
            out[i] = out[i].clamp(lo[i], hi[i]);
        }
    }
    Ok(ParameterVector::from_vec(out))
}

/// Result of one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub params: ParameterVector,
    pub train_loss: f64,
    /// Present when `round_index` is a multiple of `eval_every`.
    pub record: Option<RoundRecord>,
}

/// Broadcast, local training on every client, aggregation, and (on
/// evaluation rounds) test metrics.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    spec: &ModelSpec,
    global: &ParameterVector,
    clients: &[ClientState],
    train: &[Example],
    test: &[Example],
    config: &FedConfig,
    round_index: usize,
) -> Result<RoundOutcome> {
    if clients.is_empty() {
        return Err(Error::usage("a round needs at least one client"));
    }
    let started = Instant::now();
    let updates: Vec<LocalUpdate> = clients
        .par_iter()
        .map(|c| {
            local_train(
                spec,
                global,
                &c.shard,
                train,
                config.local_epochs,
                config.batch_size,
                config.learning_rate,
                config.client_seed(c.index, round_index),
            )
        })
        .collect::<Result<_>>()?;
    let train_loss = updates.iter().map(|u| u.mean_loss).sum::<f64>() / updates.len() as f64;
    let weighted: Vec<(ParameterVector, usize)> = updates.into_iter().map(|u| (u.params, u.num_samples)).collect();
    let params = aggregate(&weighted)?;

    let record = if round_index.is_multiple_of(config.eval_every) && params.is_finite() {
        let (test_accuracy, test_loss) = model::evaluate(spec, &params, test)?;
        Some(RoundRecord {
            round: round_index,
            test_accuracy,
            test_loss,
            train_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    } else {
        None
    };
    Ok(RoundOutcome {
        params,
        train_loss,
        record,
    })
}

/// A finished (or diverged) training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub records: Vec<RoundRecord>,
    pub params: ParameterVector,
    /// Round after which the parameters first became non-finite. The run
    /// stops there and `params` holds the last finite global parameters.
    pub diverged_at: Option<usize>,
}

impl TrainingRun {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn final_record(&self) -> Option<&RoundRecord> {
        self.records.last()
    }
}

pub fn run_training(spec: &ModelSpec, train: &[Example], test: &[Example], config: &FedConfig) -> Result<TrainingRun> {
    run_training_observed(spec, train, test, config, |_, _| {})
}

/// [`run_training`] calling `observe(round, params)` with the global
/// parameters after every round.
pub fn run_training_observed(
    spec: &ModelSpec,
    train: &[Example],
    test: &[Example],
    config: &FedConfig,
    mut observe: impl FnMut(usize, &ParameterVector),
) -> Result<TrainingRun> {
    config.validate()?;
    spec.validate()?;
    if test.is_empty() && config.rounds >= config.eval_every {
        return Err(Error::usage("test set is empty"));
    }
    let shards = partition_iid(train.len(), config.num_clients, config.seed)?;
    let clients = ClientState::from_shards(shards);
    let mut params = model::init_params(spec, config.seed)?;
    let mut records = Vec::new();
    for round in 1..=config.rounds {
        let outcome = run_round(spec, &params, &clients, train, test, config, round)?;
        if !outcome.params.is_finite() {
            return Ok(TrainingRun {
                records,
                params,
                diverged_at: Some(round),
            });
        }
        params = outcome.params;
        observe(round, &params);
        records.extend(outcome.record);
    }
    Ok(TrainingRun {
        records,
        params,
        diverged_at: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::model::Input;

    fn toy_examples(n: usize) -> Vec<Example> {
        (0..n)
            .map(|i| Example {
                input: Input::Bag(FeatureVector::new(vec![(i % 2) as u32], vec![1.0], 2).unwrap()),
                label: i % 2,
            })
            .collect()
    }

    #[test]
    fn aggregate_examples() {
        let v = |x: &[f64]| ParameterVector::from_vec(x.to_vec());
        assert_eq!(aggregate(&[(v(&[2.0, 4.0]), 10)]).unwrap(), v(&[2.0, 4.0]));
        assert_eq!(
            aggregate(&[(v(&[2.0, 4.0]), 5), (v(&[0.0, 0.0]), 5)]).unwrap(),
            v(&[1.0, 2.0])
        );
        assert_eq!(
            aggregate(&[(v(&[1.0, 1.0]), 1), (v(&[5.0, 9.0]), 3)]).unwrap(),
            v(&[4.0, 7.0])
        );
    }

    #[test]
    fn aggregate_errors() {
        let v = |x: &[f64]| ParameterVector::from_vec(x.to_vec());
        assert!(matches!(aggregate(&[]), Err(Error::Usage(_))));
        assert!(matches!(
            aggregate(&[(v(&[1.0]), 1), (v(&[1.0, 2.0]), 1)]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(aggregate(&[(v(&[1.0]), 0)]).is_err());
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let ex = toy_examples(7);
        let p = ParameterVector::from_vec(vec![0.3, -0.2, 0.1, 0.0, -0.5, 0.25]);
        let shard = Shard {
            owner: 0,
            indices: (0..7).collect(),
        };
        let u = local_train(&spec, &p, &shard, &ex, 2, 3, 0.0, 11).unwrap();
        assert_eq!(u.params, p);
        assert_eq!(u.num_samples, 7);
        assert_eq!(u.steps, 6);
    }

    #[test]
    fn single_full_batch_step() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let ex = toy_examples(5);
        let p = ParameterVector::from_vec(vec![0.3, -0.2, 0.1, 0.0, -0.5, 0.25]);
        let shard = Shard {
            owner: 0,
            indices: (0..5).collect(),
        };
        let u = local_train(&spec, &p, &shard, &ex, 1, 8, 0.5, 1).unwrap();
        let full = Batch::from_slice(&ex).unwrap();
        let g = model::gradient(&spec, &p, &full).unwrap();
        for i in 0..p.dim() {
            let expected = p[i] - 0.5 * g[i];
            assert!((u.params[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_shard_rejected() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let p = model::init_params(&spec, 0).unwrap();
        let shard = Shard {
            owner: 3,
            indices: vec![],
        };
        assert!(matches!(
            local_train(&spec, &p, &shard, &toy_examples(2), 1, 1, 0.1, 0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn zero_rounds_returns_initial_params() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let ex = toy_examples(8);
        let cfg = FedConfig::new(2, 0.1, 0, 5);
        let run = run_training(&spec, &ex, &ex, &cfg).unwrap();
        assert!(run.records.is_empty());
        assert_eq!(run.params, model::init_params(&spec, 5).unwrap());
    }

    #[test]
    fn eval_every_thins_records() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let ex = toy_examples(8);
        let cfg = FedConfig {
            eval_every: 3,
            ..FedConfig::new(2, 0.1, 10, 5)
        };
        let rounds: Vec<usize> = run_training(&spec, &ex, &ex, &cfg)
            .unwrap()
            .records
            .iter()
            .map(|r| r.round)
            .collect();
        assert_eq!(rounds, vec![3, 6, 9]);
    }

    #[test]
    fn divergence_is_reported_not_raised() {
        let spec = ModelSpec::softmax_regression(2, 2);
        // A feature weight of 4 makes the first step overflow.
        let ex: Vec<Example> = (0..8)
            .map(|i| Example {
                input: Input::Bag(FeatureVector::new(vec![0], vec![4.0], 2).unwrap()),
                label: i % 2,
            })
            .collect();
        let cfg = FedConfig {
            batch_size: 1,
            ..FedConfig::new(1, f64::MAX, 5, 0)
        };
        let run = run_training(&spec, &ex, &ex, &cfg).unwrap();
        assert!(run.diverged());
        assert!(run.params.is_finite());
    }

    #[test]
    fn invalid_config_rejected() {
        let spec = ModelSpec::softmax_regression(2, 2);
        let ex = toy_examples(8);
        assert!(run_training(&spec, &ex, &ex, &FedConfig::new(0, 0.1, 1, 0)).is_err());
        assert!(run_training(&spec, &ex, &ex, &FedConfig::new(9, 0.1, 1, 0)).is_err());
        assert!(run_training(&spec, &ex, &ex, &FedConfig::new(1, -1.0, 1, 0)).is_err());
    }
}
