//! Deterministic simulation of synchronous federated averaging over text
//! classifiers, with the experiment protocol used to study how accuracy and
//! convergence speed change as the same data is spread over more clients.
//!
//! * [`model`]: softmax regression and a tiny transformer with exact gradients.
//! * [`data`]: CSV loading, synthetic corpora, i.i.d. client partitions.
//! * [`fedavg`]: local SGD, weighted aggregation, communication rounds.
//! * [`harness`]: baselines, client sweeps, rounds-to-target.

pub mod autodiff;
pub mod data;
mod error;
pub mod features;
pub mod fedavg;
pub mod gradcheck;
pub mod harness;
pub mod model;
mod params;
pub mod rng;
pub mod tasks;

pub use data::{
    load_csv, partition_iid, split_train_test, synth_generate, CsvSchema, Dataset, Record, Shard, SynthSpec,
};
pub use error::{Error, Result};
pub use features::{hash_features, FeatureVector};
pub use fedavg::{aggregate, local_train, run_round, run_training, FedConfig, RoundRecord, TrainingRun};
pub use harness::{
    client_sweep, random_baseline, rounds_to_target, run_baseline, ExperimentPlan, SweepReport, SweepRow, TargetOutcome,
};
pub use model::{
    accuracy, gradient, init_params, loss, Batch, Example, Input, ModelSpec, SoftmaxSpec, TransformerSpec,
};
pub use params::ParameterVector;
