//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected; every known key has a default, written out in full to
//! `resolved_config.txt` by each command.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedscale::fedavg::{default_learning_rate, FedConfig};
use fedscale::harness::ExperimentPlan;
use fedscale::{CsvSchema, ModelSpec, SoftmaxSpec, SynthSpec, TransformerSpec};

/// Every accepted key, in the order `resolved_config.txt` lists them.
pub const KEYS: &[&str] = &[
    "task",
    "seed",
    "out_dir",
    "model.kind",
    "model.vocab",
    "model.ngram_max",
    "model.embed_dim",
    "model.num_layers",
    "model.num_heads",
    "model.max_seq_len",
    "model.ffn_dim",
    "data.source",
    "data.test_source",
    "data.train_fraction",
    "data.num_classes",
    "data.label_column",
    "data.text_columns",
    "data.label_base",
    "data.has_header",
    "synth.classes",
    "synth.samples",
    "synth.vocab",
    "synth.doc_len",
    "synth.signal",
    "synth.seed",
    "fed.K",
    "fed.E",
    "fed.B",
    "fed.lr",
    "fed.rounds",
    "fed.eval_every",
    "plan.clients",
    "plan.baseline_rounds",
    "plan.threshold_rounds",
    "plan.target_fraction",
    "gradcheck.examples",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(k) => write!(f, "config key `{k}`: {}", self.message),
            None => write!(f, "config: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn key_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError {
        key: Some(key.to_string()),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synth(SynthSpec),
    Csv { path: PathBuf, schema: CsvSchema },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TestSource {
    /// Seeded split of the training source with this train fraction.
    Split(f64),
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub model: ModelSpec,
    pub data: DataSource,
    pub test: TestSource,
    pub fed: FedConfig,
    pub clients: Vec<usize>,
    pub baseline_rounds: usize,
    pub threshold_rounds: usize,
    pub target_fraction: f64,
    pub gradcheck_examples: usize,
    resolved: Vec<(String, String)>,
}

/// Parses `key = value` lines into a map, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError {
                key: None,
                message: format!("line {}: expected `key = value`, got {line:?}", lineno + 1),
            });
        };
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(key_error(k, "unknown key"));
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(key_error(k, "given more than once"));
        }
    }
    Ok(map)
}

struct Resolver {
    given: BTreeMap<String, String>,
    resolved: Vec<(String, String)>,
}

impl Resolver {
    fn raw(&self, key: &str) -> Option<&str> {
        self.given.get(key).map(String::as_str)
    }

    fn get<T>(&mut self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let value = match self.raw(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|e| key_error(key, format!("invalid value {s:?}: {e}")))?,
            None => default,
        };
        self.resolved.push((key.to_string(), value.to_string()));
        Ok(value)
    }

    fn get_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>, ConfigError> {
        let value = match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| key_error(key, format!("invalid list {s:?}: {e}")))?,
            None => default.to_vec(),
        };
        let text = value.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
        self.resolved.push((key.to_string(), text));
        Ok(value)
    }

    fn skip(&mut self, key: &str) {
        self.resolved.push((key.to_string(), String::new()));
    }
}

fn positive(key: &str, v: usize) -> Result<usize, ConfigError> {
    if v == 0 {
        Err(key_error(key, "must be positive"))
    } else {
        Ok(v)
    }
}

impl RunConfig {
    pub fn from_file(
        path: &Path,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::from_str_with(&text, seed_override, out_override)
    }

    pub fn from_str_with(
        text: &str,
        seed_override: Option<u64>,
        out_override: Option<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let mut given = parse_pairs(text)?;
        if let Some(seed) = seed_override {
            given.insert("seed".into(), seed.to_string());
        }
        if let Some(out) = out_override {
            given.insert("out_dir".into(), out.display().to_string());
        }
        let mut r = Resolver {
            given,
            resolved: Vec::new(),
        };

        let task: String = r.get("task", "synth".to_string())?;
        let seed: u64 = r.get("seed", 1)?;
        let out_dir: String = r.get("out_dir", "out".to_string())?;

        let kind: String = r.get("model.kind", "softmax-regression".to_string())?;
        let transformer = match kind.as_str() {
            "softmax-regression" => false,
            "tiny-transformer" => true,
            other => return Err(key_error("model.kind", format!("unknown model kind {other:?}"))),
        };
        let vocab = r.get("model.vocab", if transformer { 256 } else { 4096 })?;
        let ngram_max = r.get("model.ngram_max", 1usize)?;
        let embed_dim = r.get("model.embed_dim", 8usize)?;
        let num_layers = r.get("model.num_layers", 1usize)?;
        let num_heads = r.get("model.num_heads", 2usize)?;
        let max_seq_len = r.get("model.max_seq_len", fedscale::features::DEFAULT_MAX_SEQ_LEN)?;
        let ffn_dim = r.get("model.ffn_dim", 4 * embed_dim)?;

        let source: String = r.get("data.source", "synth".to_string())?;
        let test_source: String = r.get("data.test_source", "split".to_string())?;
        let train_fraction: f64 = r.get("data.train_fraction", 0.8)?;
        let is_csv = source != "synth";

        let (data, num_classes) = if is_csv {
            let num_classes = match r.raw("data.num_classes") {
                Some(_) => r.get("data.num_classes", 0usize)?,
                None => return Err(key_error("data.num_classes", "required when data.source is a CSV path")),
            };
            let label_column = r.get("data.label_column", 0usize)?;
            let text_columns = r.get_list("data.text_columns", &[1])?;
            let label_base = r.get("data.label_base", 0i64)?;
            let has_header = r.get("data.has_header", false)?;
            for k in [
                "synth.classes",
                "synth.samples",
                "synth.vocab",
                "synth.doc_len",
                "synth.signal",
                "synth.seed",
            ] {
                if r.raw(k).is_some() {
                    return Err(key_error(k, "only valid with data.source = synth"));
                }
                r.skip(k);
            }
            let schema = CsvSchema {
                label_column,
                text_columns,
                label_base,
                num_classes,
                has_header,
            };
            (
                DataSource::Csv {
                    path: PathBuf::from(&source),
                    schema,
                },
                num_classes,
            )
        } else {
            for k in [
                "data.num_classes",
                "data.label_column",
                "data.text_columns",
                "data.label_base",
                "data.has_header",
            ] {
                if r.raw(k).is_some() {
                    return Err(key_error(k, "only valid with a CSV data.source"));
                }
                r.skip(k);
            }
            let defaults = SynthSpec::default();
            let synth = SynthSpec {
                num_classes: r.get("synth.classes", defaults.num_classes)?,
                samples: r.get("synth.samples", defaults.samples)?,
                vocab_size: r.get("synth.vocab", defaults.vocab_size)?,
                doc_len: r.get("synth.doc_len", defaults.doc_len)?,
                signal: r.get("synth.signal", defaults.signal)?,
                seed: r.get("synth.seed", seed)?,
            };
            synth.validate().map_err(|e| key_error("synth", e.to_string()))?;
            let c = synth.num_classes;
            (DataSource::Synth(synth), c)
        };
        let test = if test_source == "split" {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(key_error("data.train_fraction", "must lie in (0, 1)"));
            }
            TestSource::Split(train_fraction)
        } else {
            TestSource::Csv(PathBuf::from(test_source))
        };

        let model = if transformer {
            ModelSpec::TinyTransformer(TransformerSpec {
                num_classes,
                vocab_size: vocab,
                embed_dim,
                num_layers,
                num_heads,
                max_seq_len,
                ffn_dim,
            })
        } else {
            ModelSpec::SoftmaxRegression(SoftmaxSpec {
                num_classes,
                vocab_size: vocab,
                ngram_max,
            })
        };
        model.validate().map_err(|e| key_error("model", e.to_string()))?;

        let num_clients = r.get("fed.K", 1usize)?;
        let fed = FedConfig {
            num_clients: positive("fed.K", num_clients)?,
            local_epochs: positive("fed.E", r.get("fed.E", fedscale::fedavg::DEFAULT_LOCAL_EPOCHS)?)?,
            batch_size: positive("fed.B", r.get("fed.B", fedscale::fedavg::DEFAULT_BATCH_SIZE)?)?,
            learning_rate: r.get("fed.lr", default_learning_rate(&model))?,
            rounds: r.get("fed.rounds", 100usize)?,
            seed,
            eval_every: positive("fed.eval_every", r.get("fed.eval_every", 1usize)?)?,
        };
        if !(fed.learning_rate >= 0.0 && fed.learning_rate.is_finite()) {
            return Err(key_error("fed.lr", "must be finite and non-negative"));
        }

        let clients = r.get_list("plan.clients", &fedscale::harness::DEFAULT_CLIENT_COUNTS)?;
        let baseline_rounds = r.get("plan.baseline_rounds", 100usize)?;
        let threshold_rounds = r.get("plan.threshold_rounds", 200usize)?;
        let target_fraction = r.get("plan.target_fraction", fedscale::harness::DEFAULT_TARGET_FRACTION)?;
        let gradcheck_examples = positive("gradcheck.examples", r.get("gradcheck.examples", 4usize)?)?;

        let resolved = std::mem::take(&mut r.resolved);
        debug_assert_eq!(resolved.len(), KEYS.len());
        Ok(RunConfig {
            task,
            seed,
            out_dir: PathBuf::from(out_dir),
            model,
            data,
            test,
            fed,
            clients,
            baseline_rounds,
            threshold_rounds,
            target_fraction,
            gradcheck_examples,
            resolved,
        })
    }

    /// The experiment plan for `sweep`, validated.
    pub fn plan(&self) -> Result<ExperimentPlan, ConfigError> {
        let plan = ExperimentPlan {
            task: self.task.clone(),
            model: self.model.clone(),
            client_counts: self.clients.clone(),
            baseline_rounds: self.baseline_rounds,
            threshold_rounds: self.threshold_rounds,
            target_fraction: self.target_fraction,
            base: self.fed.clone(),
            seeds: vec![self.seed],
        };
        plan.validate().map_err(|e| key_error("plan", e.to_string()))?;
        Ok(plan)
    }

    /// Every key with its effective value, one `key=value` per line.
    pub fn resolved_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn resolved_pairs(&self) -> &[(String, String)] {
        &self.resolved
    }
}
