//! Differentiable classifiers.
//!
//! Two model kinds are built in: a softmax regression over hashed n-gram
//! features and a tiny pre-norm transformer encoder over hashed token ids.
//! Every model maps a batch to the mean cross-entropy of its true labels and
//! exposes the exact gradient of that loss.

mod softmax;
mod transformer;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::features::{self, FeatureVector, DEFAULT_MAX_SEQ_LEN};
use crate::params::ParameterVector;

pub use transformer::{TensorSlot, TransformerLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxSpec {
    pub num_classes: usize,
    /// Hashed vocabulary size V.
    pub vocab_size: usize,
    /// 1 for unigrams only, 2 to add bigrams.
    pub ngram_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub num_classes: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub ffn_dim: usize,
}

impl TransformerSpec {
    /// Defaults: `max_seq_len = 128`, `ffn_dim = 4 · embed_dim`.
    pub fn new(num_classes: usize, vocab_size: usize, embed_dim: usize, num_layers: usize, num_heads: usize) -> Self {
        Self {
            num_classes,
            vocab_size,
            embed_dim,
            num_layers,
            num_heads,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            ffn_dim: 4 * embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    SoftmaxRegression(SoftmaxSpec),
    TinyTransformer(TransformerSpec),
}

/// Encoded model input.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Bag(FeatureVector),
    Tokens(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Input,
    pub label: usize,
}

/// A non-empty mini-batch of borrowed examples.
#[derive(Debug, Clone)]
pub struct Batch<'a>(Vec<&'a Example>);

impl<'a> Batch<'a> {
    pub fn new(examples: Vec<&'a Example>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::usage("batch must not be empty"));
        }
        Ok(Self(examples))
    }

    pub fn from_slice(examples: &'a [Example]) -> Result<Self> {
        Self::new(examples.iter().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &'a Example> + '_ {
        self.0.iter().copied()
    }
}

impl ModelSpec {
    pub fn softmax_regression(num_classes: usize, vocab_size: usize) -> Self {
        ModelSpec::SoftmaxRegression(SoftmaxSpec {
            num_classes,
            vocab_size,
            ngram_max: 1,
        })
    }

    pub fn tiny_transformer(spec: TransformerSpec) -> Self {
        ModelSpec::TinyTransformer(spec)
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            ModelSpec::SoftmaxRegression(_) => "softmax-regression",
            ModelSpec::TinyTransformer(_) => "tiny-transformer",
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::SoftmaxRegression(s) => s.num_classes,
            ModelSpec::TinyTransformer(s) => s.num_classes,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            ModelSpec::SoftmaxRegression(s) => s.vocab_size,
            ModelSpec::TinyTransformer(s) => s.vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes() < 2 {
            return Err(Error::config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes()
            )));
        }
        if self.vocab_size() < 2 {
            return Err(Error::config(format!(
                "vocab_size must be >= 2, got {}",
                self.vocab_size()
            )));
        }
        match self {
            ModelSpec::SoftmaxRegression(s) => {
                if !(1..=2).contains(&s.ngram_max) {
                    return Err(Error::config(format!("ngram_max must be 1 or 2, got {}", s.ngram_max)));
                }
            }
            ModelSpec::TinyTransformer(s) => {
                if s.embed_dim == 0 || s.num_heads == 0 || s.max_seq_len == 0 || s.ffn_dim == 0 {
                    return Err(Error::config("transformer dimensions must be positive"));
                }
                if s.embed_dim % s.num_heads != 0 {
                    return Err(Error::config(format!(
                        "embed_dim {} is not divisible by num_heads {}",
                        s.embed_dim, s.num_heads
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parameter dimension d.
    ///
    /// Softmax regression: `C·V + C`. Tiny transformer: see
    /// [`TransformerLayout::num_params`].
    pub fn num_params(&self) -> usize {
        match self {
            ModelSpec::SoftmaxRegression(s) => s.num_classes * s.vocab_size + s.num_classes,
            ModelSpec::TinyTransformer(s) => TransformerLayout::new(s).num_params(),
        }
    }

    /// Featurizes raw text for this model.
    pub fn encode_text(&self, text: &str) -> Result<Input> {
        match self {
            ModelSpec::SoftmaxRegression(s) => features::hash_features(text, s.vocab_size, s.ngram_max).map(Input::Bag),
            ModelSpec::TinyTransformer(s) => features::token_ids(text, s.vocab_size, s.max_seq_len).map(Input::Tokens),
        }
    }

    pub fn encode(&self, dataset: &Dataset) -> Result<Vec<Example>> {
        if dataset.num_classes() != self.num_classes() {
            return Err(Error::config(format!(
                "dataset has {} classes but the model expects {}",
                dataset.num_classes(),
                self.num_classes()
            )));
        }
        dataset
            .records()
            .iter()
            .map(|r| {
                Ok(Example {
                    input: self.encode_text(&r.text)?,
                    label: r.label,
                })
            })
            .collect()
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        if ex.label >= self.num_classes() {
            return Err(Error::usage(format!(
                "label {} out of range for {} classes",
                ex.label,
                self.num_classes()
            )));
        }
        match (&ex.input, self) {
            (Input::Bag(f), ModelSpec::SoftmaxRegression(s)) if f.vocab_size() == s.vocab_size => Ok(()),
            (Input::Tokens(t), ModelSpec::TinyTransformer(s))
                if t.len() <= s.max_seq_len && t.iter().all(|&id| (id as usize) < s.vocab_size) =>
            {
                Ok(())
            }
            _ => Err(Error::config(format!(
                "input encoding does not match a {} model",
                self.kind_name()
            ))),
        }
    }

    fn check_params(&self, params: &ParameterVector) -> Result<()> {
        params.check_dim(self.num_params())
    }
}

/// Deterministic initialization. Softmax regression starts at zero; the
/// transformer draws weights from `U(−1/√fan_in, 1/√fan_in)` with unit
/// layer-norm gains and zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParameterVector> {
    spec.validate()?;
    Ok(match spec {
        ModelSpec::SoftmaxRegression(_) => ParameterVector::zeros(spec.num_params()),
        ModelSpec::TinyTransformer(s) => transformer::init(s, seed),
    })
}

/// Class scores for one input.
pub fn logits(spec: &ModelSpec, params: &ParameterVector, input: &Input) -> Result<Vec<f64>> {
    spec.check_params(params)?;
    match (spec, input) {
        (ModelSpec::SoftmaxRegression(s), Input::Bag(f)) => Ok(softmax::logits(s, params.as_slice(), f)),
        (ModelSpec::TinyTransformer(s), Input::Tokens(t)) => Ok(transformer::logits(s, params.as_slice(), t)),
        _ => Err(Error::config(format!(
            "input encoding does not match a {} model",
            spec.kind_name()
        ))),
    }
}

/// Argmax of `scores`, ties resolved toward the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

pub fn predict(spec: &ModelSpec, params: &ParameterVector, input: &Input) -> Result<usize> {
    logits(spec, params, input).map(|z| argmax(&z))
}

/// Mean cross-entropy over the batch.
pub fn loss(spec: &ModelSpec, params: &ParameterVector, batch: &Batch) -> Result<f64> {
    spec.check_params(params)?;
    let mut total = 0.0;
    for ex in batch.iter() {
        spec.check_example(ex)?;
        let z = logits(spec, params, &ex.input)?;
        total += crate::autodiff::cross_entropy_of(&z, ex.label);
    }
    Ok(total / batch.len() as f64)
}

/// Mean cross-entropy and its exact gradient with respect to `params`.
pub fn loss_and_gradient(spec: &ModelSpec, params: &ParameterVector, batch: &Batch) -> Result<(f64, ParameterVector)> {
    spec.check_params(params)?;
    for ex in batch.iter() {
        spec.check_example(ex)?;
    }
    let (l, g) = match spec {
        ModelSpec::SoftmaxRegression(s) => softmax::loss_and_gradient(s, params.as_slice(), batch),
        ModelSpec::TinyTransformer(s) => transformer::loss_and_gradient(s, params.as_slice(), batch),
    };
    Ok((l, ParameterVector::from_vec(g)))
}

pub fn gradient(spec: &ModelSpec, params: &ParameterVector, batch: &Batch) -> Result<ParameterVector> {
    loss_and_gradient(spec, params, batch).map(|(_, g)| g)
}

/// Fraction of examples whose predicted class equals the label.
pub fn accuracy(spec: &ModelSpec, params: &ParameterVector, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::usage("accuracy of an empty dataset is undefined"));
    }
    let mut correct = 0usize;
    for ex in examples {
        spec.check_example(ex)?;
        if predict(spec, params, &ex.input)? == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Accuracy and mean cross-entropy over `examples` in one pass.
pub fn evaluate(spec: &ModelSpec, params: &ParameterVector, examples: &[Example]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::usage("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut total_loss = 0.0;
    for ex in examples {
        spec.check_example(ex)?;
        let z = logits(spec, params, &ex.input)?;
        if argmax(&z) == ex.label {
            correct += 1;
        }
        total_loss += crate::autodiff::cross_entropy_of(&z, ex.label);
    }
    let n = examples.len() as f64;
    Ok((correct as f64 / n, total_loss / n))
}
