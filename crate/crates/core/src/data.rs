//! Datasets, synthetic corpora and client partitioning.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub label: usize,
    pub text: String,
}

/// Labeled text records with `num_classes ≥ 2` and every label in `[0, C)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(records: Vec<Record>, num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::config(format!("num_classes must be >= 2, got {num_classes}")));
        }
        if let Some((i, r)) = records.iter().enumerate().find(|(_, r)| r.label >= num_classes) {
            return Err(Error::usage(format!(
                "record {i} has label {} but the dataset has {num_classes} classes",
                r.label
            )));
        }
        Ok(Self { records, num_classes })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            num_classes: self.num_classes,
        }
    }
}

/// Column layout of a labeled CSV file. Columns are zero-based positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: usize,
    /// Joined with a single space, in the listed order.
    pub text_columns: Vec<usize>,
    /// Subtracted from every file label (AG News files are 1-based).
    pub label_base: i64,
    pub num_classes: usize,
    pub has_header: bool,
}

impl CsvSchema {
    /// `label,text` with 0-based labels and no header.
    pub fn simple(num_classes: usize) -> Self {
        Self {
            label_column: 0,
            text_columns: vec![1],
            label_base: 0,
            num_classes,
            has_header: false,
        }
    }

    /// AG News layout: `class,title,description`, 1-based classes, 4 classes.
    pub fn ag_news() -> Self {
        Self {
            label_column: 0,
            text_columns: vec![1, 2],
            label_base: 1,
            num_classes: 4,
            has_header: false,
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    read_csv(File::open(path)?, path, schema)
}

/// Parses CSV from any reader; `path` is only used in error messages.
pub fn read_csv(reader: impl Read, path: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if schema.text_columns.is_empty() {
        return Err(Error::config("schema needs at least one text column"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .flexible(true)
        .from_reader(reader);
    let mut records = Vec::new();
    for (row, result) in (1u64..).zip(rdr.records()) {
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            row,
            message,
        };
        let rec = result.map_err(|e| malformed(e.to_string()))?;
        let field = |col: usize| {
            rec.get(col)
                .ok_or_else(|| malformed(format!("missing column {col} (row has {} fields)", rec.len())))
        };
        let raw = field(schema.label_column)?.trim();
        let value: i64 = raw
            .parse()
            .map_err(|_| malformed(format!("label {raw:?} is not an integer")))?;
        let label = value - schema.label_base;
        if label < 0 || label as usize >= schema.num_classes {
            return Err(Error::LabelOutOfRange {
                path: path.to_path_buf(),
                row,
                value,
                num_classes: schema.num_classes,
            });
        }
        let text = schema
            .text_columns
            .iter()
            .map(|&c| field(c))
            .collect::<Result<Vec<_>>>()?
            .join(" ");
        records.push(Record {
            label: label as usize,
            text,
        });
    }
    Dataset::new(records, schema.num_classes)
}

/// Writes `label,text` rows (labels shifted by `label_base`) readable by
/// [`read_csv`] with `CsvSchema { label_base, ..CsvSchema::simple(C) }`.
pub fn write_csv(dataset: &Dataset, writer: impl Write, label_base: i64) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    for r in &dataset.records {
        w.write_record([(r.label as i64 + label_base).to_string().as_str(), r.text.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

/// Parameters of the synthetic corpus generator.
///
/// Each class owns a disjoint block of `vocab_size / C` signal tokens. A
/// document token is drawn from its class block with probability `signal`
/// and from the whole vocabulary otherwise. Labels cycle `0, 1, …, C−1`
/// before a seeded shuffle, so class counts differ by at most one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub samples: usize,
    pub vocab_size: usize,
    pub doc_len: usize,
    pub signal: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 4,
            samples: 2500,
            vocab_size: 8000,
            doc_len: 12,
            signal: 1.0,
            seed: 1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("synthetic corpus needs at least 2 classes"));
        }
        if self.samples < self.num_classes {
            return Err(Error::config(format!(
                "synthetic corpus needs at least {} samples, got {}",
                self.num_classes, self.samples
            )));
        }
        if self.vocab_size < self.num_classes {
            return Err(Error::config(
                "synthetic vocabulary must have at least one token per class",
            ));
        }
        if !(self.signal > 0.0 && self.signal <= 1.0) {
            return Err(Error::config(format!("signal must lie in (0, 1], got {}", self.signal)));
        }
        if self.doc_len == 0 {
            return Err(Error::config("doc_len must be positive"));
        }
        Ok(())
    }
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    spec.validate()?;
    let block = spec.vocab_size / spec.num_classes;
    let mut rng = rng::seeded(spec.seed);
    let mut labels: Vec<usize> = (0..spec.samples).map(|i| i % spec.num_classes).collect();
    rng::fisher_yates(&mut labels, &mut rng);
    let records = labels
        .into_iter()
        .map(|label| {
            let words: Vec<String> = (0..spec.doc_len)
                .map(|_| {
                    let tok = if rng.gen::<f64>() < spec.signal {
                        label * block + rng.gen_range(0..block)
                    } else {
                        rng.gen_range(0..spec.vocab_size)
                    };
                    format!("w{tok}")
                })
                .collect();
            Record {
                label,
                text: words.join(" "),
            }
        })
        .collect();
    Dataset::new(records, spec.num_classes)
}

/// One client's share of the training set, as indices into the parent dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub owner: usize,
    pub indices: Vec<usize>,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Even i.i.d. split of `0..n` into `num_clients` shards.
///
/// The indices are shuffled with a seeded Fisher–Yates and cut into
/// contiguous runs. The first `n mod K` shards hold one extra record.
pub fn partition_iid(n: usize, num_clients: usize, seed: u64) -> Result<Vec<Shard>> {
    if num_clients == 0 {
        return Err(Error::usage("number of clients must be at least 1"));
    }
    if num_clients > n {
        return Err(Error::usage(format!(
            "cannot partition {n} records among {num_clients} clients"
        )));
    }
    let order = rng::permutation(n, seed);
    let base = n / num_clients;
    let extra = n % num_clients;
    let mut shards = Vec::with_capacity(num_clients);
    let mut start = 0;
    for k in 0..num_clients {
        let size = base + usize::from(k < extra);
        shards.push(Shard {
            owner: k,
            indices: order[start..start + size].to_vec(),
        });
        start += size;
    }
    Ok(shards)
}

/// Seeded split into `(train, test)` with `round(n · fraction)` training records.
pub fn split_train_test(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::usage(format!(
            "train fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = dataset.len();
    let n_train = (n as f64 * fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::usage(format!(
            "train fraction {fraction} leaves an empty side for {n} records"
        )));
    }
    let order = rng::permutation(n, seed);
    Ok((dataset.subset(&order[..n_train]), dataset.subset(&order[n_train..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn parse(text: &str, schema: &CsvSchema) -> Result<Dataset> {
        read_csv(Cursor::new(text.as_bytes().to_vec()), Path::new("mem.csv"), schema)
    }

    #[test]
    fn label_base_shift() {
        let ds = parse("1,a,b\n2,c,d\n3,\"e, f\",g\n", &CsvSchema::ag_news()).unwrap();
        let labels: Vec<usize> = ds.records().iter().map(|r| r.label).collect();
        assert_eq!(labels, vec![0, 1, 2]);
        assert_eq!(ds.records()[2].text, "e, f g");
    }

    #[test]
    fn out_of_range_label_names_row() {
        let err = parse("1,a,b\n9,c,d\n", &CsvSchema::ag_news()).unwrap_err();
        match err {
            Error::LabelOutOfRange { row, value, .. } => assert_eq!((row, value), (2, 9)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(err_string("1,a,b\n9,c,d\n").contains("row 2"));
    }

    fn err_string(text: &str) -> String {
        parse(text, &CsvSchema::ag_news()).unwrap_err().to_string()
    }

    #[test]
    fn malformed_rows_are_reported() {
        let err = parse("0,fine\nx,bad\n", &CsvSchema::simple(2)).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err}");
        let err = parse("0,fine\n1\n", &CsvSchema::simple(2)).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err}");
    }

    #[test]
    fn header_is_skipped_and_quotes_unescaped() {
        let schema = CsvSchema {
            has_header: true,
            ..CsvSchema::simple(2)
        };
        let ds = parse("label,text\n1,\"say \"\"hi\"\"\"\n0,\n", &schema).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.records()[0].text, "say \"hi\"");
        assert_eq!(ds.records()[1].text, "");
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let spec = SynthSpec {
            num_classes: 2,
            samples: 10,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec).unwrap();
        assert_eq!(ds.class_counts(), vec![5, 5]);
        let spec4 = SynthSpec {
            num_classes: 4,
            samples: 4000,
            seed: 1,
            ..SynthSpec::default()
        };
        assert_eq!(synth_generate(&spec4).unwrap(), synth_generate(&spec4).unwrap());
        let counts = synth_generate(&SynthSpec { samples: 4003, ..spec4 })
            .unwrap()
            .class_counts();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn full_signal_uses_only_class_tokens() {
        let spec = SynthSpec {
            num_classes: 4,
            samples: 40,
            vocab_size: 40,
            ..SynthSpec::default()
        };
        for r in synth_generate(&spec).unwrap().records() {
            for w in r.text.split(' ') {
                let tok: usize = w[1..].parse().unwrap();
                assert_eq!(tok / 10, r.label);
            }
        }
    }

    #[test]
    fn synth_rejects_bad_specs() {
        assert!(synth_generate(&SynthSpec {
            signal: 0.0,
            ..SynthSpec::default()
        })
        .is_err());
        assert!(synth_generate(&SynthSpec {
            samples: 3,
            ..SynthSpec::default()
        })
        .is_err());
    }

    #[test]
    fn partition_sizes() {
        let sizes = |n, k| -> Vec<usize> { partition_iid(n, k, 0).unwrap().iter().map(Shard::len).collect() };
        assert_eq!(sizes(10, 4), vec![3, 3, 2, 2]);
        assert!(sizes(120_000, 32).iter().all(|&s| s == 3_750));
        let one = partition_iid(17, 1, 9).unwrap();
        let mut idx = one[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..17).collect::<Vec<_>>());
        assert!(partition_iid(3, 4, 0).is_err());
        assert!(partition_iid(3, 0, 0).is_err());
    }

    #[test]
    fn split_sizes_and_errors() {
        let ds = synth_generate(&SynthSpec {
            samples: 1000,
            ..SynthSpec::default()
        })
        .unwrap();
        let (a, b) = split_train_test(&ds, 0.8, 3).unwrap();
        assert_eq!((a.len(), b.len()), (800, 200));
        assert_eq!(split_train_test(&ds, 0.8, 3).unwrap(), (a, b));
        assert!(split_train_test(&ds, 0.0, 3).is_err());
        assert!(split_train_test(&ds, 1.0, 3).is_err());
        assert!(split_train_test(&ds, 0.0001, 3).is_err());
    }
}
