use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use fedscale::data::{read_csv, write_csv};
use fedscale::{
    load_csv, partition_iid, split_train_test, synth_generate, CsvSchema, Dataset, Error, Record, SynthSpec,
};
use proptest::prelude::*;

fn check_partition(n: usize, k: usize, seed: u64) {
    let shards = partition_iid(n, k, seed).unwrap();
    assert_eq!(shards.len(), k);
    let mut seen = vec![false; n];
    for (i, s) in shards.iter().enumerate() {
        assert_eq!(s.owner, i);
        assert!(s.len() == n / k || s.len() == n / k + 1);
        assert_eq!(s.len(), n / k + usize::from(i < n % k));
        for &idx in &s.indices {
            assert!(!seen[idx], "index {idx} assigned twice");
            seen[idx] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));
}

proptest! {
    #[test]
    fn partition_is_exact_and_balanced((n, k) in (1usize..=10_000).prop_flat_map(|n| (Just(n), 1..=n.min(64))), seed in any::<u64>()) {
        check_partition(n, k, seed);
        prop_assert_eq!(partition_iid(n, k, seed).unwrap(), partition_iid(n, k, seed).unwrap());
    }

    #[test]
    fn partition_with_many_clients((n, k) in (1usize..=2_000).prop_flat_map(|n| (Just(n), 1..=n)), seed in any::<u64>()) {
        check_partition(n, k, seed);
    }

    #[test]
    fn csv_round_trip(
        rows in prop::collection::vec((0usize..5, "[a-zA-Z0-9 ,\"'.\\-]{0,40}"), 1..50),
        base in 0i64..3,
    ) {
        let records: Vec<Record> = rows.into_iter().map(|(label, text)| Record { label, text }).collect();
        let ds = Dataset::new(records, 5).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf, base).unwrap();
        let schema = CsvSchema { label_base: base, ..CsvSchema::simple(5) };
        let back = read_csv(Cursor::new(buf), Path::new("mem.csv"), &schema).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn split_covers_dataset(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let spec = SynthSpec { num_classes: 2, samples: n, vocab_size: 10, doc_len: 2, signal: 0.5, seed };
        let ds = synth_generate(&spec).unwrap();
        let n_train = (n as f64 * frac).round() as usize;
        match split_train_test(&ds, frac, seed) {
            Ok((train, test)) => {
                prop_assert_eq!(train.len(), n_train);
                prop_assert_eq!(train.len() + test.len(), n);
                let mut all: Vec<&Record> = train.records().iter().chain(test.records()).collect();
                let mut orig: Vec<&Record> = ds.records().iter().collect();
                all.sort_by(|a, b| (a.label, &a.text).cmp(&(b.label, &b.text)));
                orig.sort_by(|a, b| (a.label, &a.text).cmp(&(b.label, &b.text)));
                prop_assert_eq!(all, orig);
            }
            Err(_) => prop_assert!(n_train == 0 || n_train == n),
        }
    }
}

#[test]
fn partition_membership_is_uniform() {
    let mut in_first = [0usize; 6];
    for seed in 0..1000 {
        let shards = partition_iid(6, 2, seed).unwrap();
        for &i in &shards[0].indices {
            in_first[i] += 1;
        }
    }
    for (i, &c) in in_first.iter().enumerate() {
        let freq = c as f64 / 1000.0;
        assert!((freq - 0.5).abs() <= 0.05, "index {i}: frequency {freq}");
    }
}

#[test]
fn partition_rejects_bad_client_counts() {
    assert!(matches!(partition_iid(5, 0, 1), Err(Error::Usage(_))));
    assert!(matches!(partition_iid(5, 6, 1), Err(Error::Usage(_))));
    check_partition(5, 5, 1);
}

#[test]
fn ag_news_sized_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    {
        let mut w = BufWriter::new(std::fs::File::create(&path).unwrap());
        for i in 0..120_000 {
            writeln!(w, "{},\"Title {i}, part\",\"Body of story {i}.\"", i % 4 + 1).unwrap();
        }
    }
    let ds = load_csv(&path, &CsvSchema::ag_news()).unwrap();
    assert_eq!(ds.len(), 120_000);
    assert_eq!(ds.class_counts(), vec![30_000; 4]);
    assert_eq!(ds.records()[5].label, 1);
    assert_eq!(ds.records()[5].text, "Title 5, part Body of story 5.");

    let shards = partition_iid(ds.len(), 32, 7).unwrap();
    assert!(shards.iter().all(|s| s.len() == 3750));
}

#[test]
fn malformed_rows_name_the_row() {
    let schema = CsvSchema::ag_news();
    let err = read_csv(Cursor::new(b"1,a,b\n9,c,d\n".to_vec()), Path::new("x.csv"), &schema).unwrap_err();
    match err {
        Error::LabelOutOfRange { row, value, .. } => assert_eq!((row, value), (2, 9)),
        other => panic!("unexpected {other:?}"),
    }
    let err = read_csv(Cursor::new(b"1,a,b\n2,c\n".to_vec()), Path::new("x.csv"), &schema).unwrap_err();
    assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err:?}");
    let err = read_csv(Cursor::new(b"x,a,b\n".to_vec()), Path::new("x.csv"), &schema).unwrap_err();
    assert!(matches!(err, Error::MalformedRow { row: 1, .. }), "{err:?}");
}

#[test]
fn synthetic_corpus_is_balanced_and_seeded() {
    let spec = SynthSpec::default();
    let a = synth_generate(&spec).unwrap();
    assert_eq!(a, synth_generate(&spec).unwrap());
    assert_eq!(a.class_counts(), vec![625; 4]);
    let b = synth_generate(&SynthSpec { seed: 2, ..spec }).unwrap();
    assert_ne!(a, b);
}
