//! Ready-made benchmark tasks.

use crate::data::{split_train_test, synth_generate, SynthSpec};
use crate::error::Result;
use crate::fedavg::FedConfig;
use crate::harness::ExperimentPlan;
use crate::model::{Example, ModelSpec};

/// An encoded train/test split with the plan that sweeps it.
#[derive(Debug, Clone)]
pub struct BenchmarkTask {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub plan: ExperimentPlan,
}

/// The synthetic 4-class client-scaling benchmark.
///
/// 2,500 documents of 12 tokens from an 8,000-token vocabulary at full class
/// signal, split 2,000/500; hashed-unigram softmax regression (V = 4096)
/// trained with E = 2, B = 32, η = 0.1 over K ∈ {1, 2, 4, 8, 16, 32}; a
/// 40-round budget and an 80-round threshold.
pub fn synthetic_four_class() -> Result<BenchmarkTask> {
    let seed = 1;
    let synth = SynthSpec {
        num_classes: 4,
        samples: 2500,
        vocab_size: 8000,
        doc_len: 12,
        signal: 1.0,
        seed,
    };
    let (train, test) = split_train_test(&synth_generate(&synth)?, 0.8, seed)?;
    let model = ModelSpec::softmax_regression(4, 4096);
    let train = model.encode(&train)?;
    let test = model.encode(&test)?;
    let mut plan = ExperimentPlan::new("synth4", model, FedConfig::new(1, 0.1, 40, seed));
    plan.baseline_rounds = 40;
    plan.threshold_rounds = 80;
    Ok(BenchmarkTask { train, test, plan })
}
