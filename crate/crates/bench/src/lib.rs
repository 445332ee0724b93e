//! Fixtures shared by the criterion benchmarks.

use fedscale::{synth_generate, Example, ModelSpec, SynthSpec, TransformerSpec};

pub fn synth_examples(spec: &ModelSpec, samples: usize, seed: u64) -> Vec<Example> {
    let synth = SynthSpec {
        num_classes: spec.num_classes(),
        samples,
        seed,
        ..SynthSpec::default()
    };
    let ds = synth_generate(&synth).expect("valid synthetic spec");
    spec.encode(&ds).expect("encodable dataset")
}

pub fn softmax_spec() -> ModelSpec {
    ModelSpec::softmax_regression(4, 4096)
}

pub fn transformer_spec() -> ModelSpec {
    ModelSpec::tiny_transformer(TransformerSpec::new(4, 512, 16, 1, 2))
}
