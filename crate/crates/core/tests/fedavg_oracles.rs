use fedscale::fedavg::{local_train, run_round, run_training_observed, ClientState};
use fedscale::model::{self, Batch, Example, Input, ModelSpec};
use fedscale::rng::{fisher_yates, mix_seed, permutation, seeded};
use fedscale::{
    aggregate, partition_iid, run_training, synth_generate, FeatureVector, FedConfig, ParameterVector, Shard, SynthSpec,
};
use proptest::prelude::*;

fn bag(idx: &[u32], w: &[f64], v: usize) -> Input {
    Input::Bag(FeatureVector::new(idx.to_vec(), w.to_vec(), v).unwrap())
}

fn synth_examples(spec: &ModelSpec, samples: usize, seed: u64) -> Vec<Example> {
    let s = SynthSpec {
        num_classes: 4,
        samples,
        vocab_size: 400,
        doc_len: 8,
        signal: 0.7,
        seed,
    };
    spec.encode(&synth_generate(&s).unwrap()).unwrap()
}

#[test]
fn local_steps_follow_hand_trace() {
    // 5 records, V = 2, C = 2, E = 2, B = 2: batches of 2, 2, 1 per epoch.
    let xs = [[1.0, 0.0], [0.0, 1.0], [0.6, 0.8], [0.8, -0.6], [0.0, 0.0]];
    let ys = [0usize, 1, 1, 0, 1];
    let examples: Vec<Example> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| Example {
            input: bag(&[0, 1], x, 2),
            label: y,
        })
        .collect();
    let spec = ModelSpec::softmax_regression(2, 2);
    let start = [0.1, -0.2, 0.3, 0.05, 0.0, 0.02];
    let lr = 0.5;
    let seed = 99;

    // Scalar softmax regression: w[c][j] at 2c + j, bias[c] at 4 + c.
    let mut theta = start;
    let mut order: Vec<usize> = (0..5).collect();
    let mut rng = seeded(seed);
    let mut steps = 0;
    for _ in 0..2 {
        fisher_yates(&mut order, &mut rng);
        for chunk in order.chunks(2) {
            let mut g = [0.0; 6];
            for &i in chunk {
                let z: Vec<f64> = (0..2)
                    .map(|c| theta[2 * c] * xs[i][0] + theta[2 * c + 1] * xs[i][1] + theta[4 + c])
                    .collect();
                let m = z[0].max(z[1]);
                let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
                let s = e[0] + e[1];
                for c in 0..2 {
                    let d = e[c] / s - if c == ys[i] { 1.0 } else { 0.0 };
                    g[2 * c] += d * xs[i][0];
                    g[2 * c + 1] += d * xs[i][1];
                    g[4 + c] += d;
                }
            }
            for j in 0..6 {
                theta[j] -= lr * g[j] / chunk.len() as f64;
            }
            steps += 1;
        }
    }
    assert_eq!(steps, 6);

    let shard = Shard {
        owner: 0,
        indices: (0..5).collect(),
    };
    let out = local_train(
        &spec,
        &ParameterVector::from_vec(start.to_vec()),
        &shard,
        &examples,
        2,
        2,
        lr,
        seed,
    )
    .unwrap();
    assert_eq!(out.steps, 6);
    assert_eq!(out.num_samples, 5);
    for (a, b) in out.params.as_slice().iter().zip(theta) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_client_matches_centralized_sgd() {
    let spec = ModelSpec::softmax_regression(4, 128);
    let train = synth_examples(&spec, 97, 5);
    let test = synth_examples(&spec, 40, 6);
    let mut config = FedConfig::new(1, 0.2, 60, 13);
    config.batch_size = 8;

    let mut observed = Vec::new();
    let run = run_training_observed(&spec, &train, &test, &config, |r, p| observed.push((r, p.clone()))).unwrap();
    assert!(!run.diverged());
    assert_eq!(observed.len(), 60);

    // Hand-written centralized loop over the same sample stream.
    let mut theta = model::init_params(&spec, config.seed).unwrap().into_vec();
    let base_order = permutation(train.len(), config.seed);
    for round in 1..=config.rounds {
        let mut rng = seeded(mix_seed(config.seed, 0, round as u64));
        let mut order = base_order.clone();
        for _ in 0..config.local_epochs {
            fisher_yates(&mut order, &mut rng);
            for chunk in order.chunks(config.batch_size) {
                let batch = Batch::new(chunk.iter().map(|&i| &train[i]).collect()).unwrap();
                let g = model::gradient(&spec, &ParameterVector::from_vec(theta.clone()), &batch).unwrap();
                for (t, gi) in theta.iter_mut().zip(g.as_slice()) {
                    *t -= config.learning_rate * gi;
                }
            }
        }
        let (r, fed) = &observed[round - 1];
        assert_eq!(*r, round);
        let same = fed
            .as_slice()
            .iter()
            .zip(&theta)
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same, "round {round} differs");
    }
}

#[test]
fn full_batch_round_equals_one_gradient_step() {
    let spec = ModelSpec::softmax_regression(4, 64);
    let train = synth_examples(&spec, 200, 8);
    let global = {
        let mut rng = seeded(3);
        use rand::Rng;
        ParameterVector::from_vec((0..spec.num_params()).map(|_| rng.gen_range(-0.5..0.5)).collect())
    };
    let lr = 0.3;
    let full = Batch::new(train.iter().collect()).unwrap();
    let g = model::gradient(&spec, &global, &full).unwrap();
    for k in [2usize, 4, 8] {
        let mut config = FedConfig::new(k, lr, 1, 21);
        config.local_epochs = 1;
        config.batch_size = train.len();
        config.eval_every = 1;
        let clients = ClientState::from_shards(partition_iid(train.len(), k, 21).unwrap());
        let out = run_round(&spec, &global, &clients, &train, &train, &config, 1).unwrap();
        for ((o, p), gi) in out.params.as_slice().iter().zip(global.as_slice()).zip(g.as_slice()) {
            assert!((o - (p - lr * gi)).abs() <= 1e-10, "K={k}");
        }
        assert!(out.record.is_some());
    }
}

fn run_in_pool(
    threads: usize,
    spec: &ModelSpec,
    train: &[Example],
    test: &[Example],
    config: &FedConfig,
) -> fedscale::TrainingRun {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let mut run = pool.install(|| run_training(spec, train, test, config)).unwrap();
    run.records.iter_mut().for_each(|r| r.wall_seconds = 0.0);
    run
}

#[test]
fn sequential_and_concurrent_runs_agree() {
    let spec = ModelSpec::softmax_regression(4, 256);
    let train = synth_examples(&spec, 400, 1);
    let test = synth_examples(&spec, 100, 2);
    let config = FedConfig::new(8, 0.1, 10, 5);
    let one = run_in_pool(1, &spec, &train, &test, &config);
    let many = run_in_pool(8, &spec, &train, &test, &config);
    assert_eq!(one, many);

    let tspec = ModelSpec::tiny_transformer(fedscale::TransformerSpec::new(4, 64, 8, 1, 2));
    let train = synth_examples(&tspec, 64, 1);
    let test = synth_examples(&tspec, 16, 2);
    let config = FedConfig::new(4, 0.01, 2, 5);
    assert_eq!(
        run_in_pool(1, &tspec, &train, &test, &config),
        run_in_pool(8, &tspec, &train, &test, &config)
    );
}

#[test]
fn training_is_deterministic_and_finite() {
    let spec = ModelSpec::softmax_regression(4, 256);
    let train = synth_examples(&spec, 300, 3);
    let test = synth_examples(&spec, 80, 4);
    let config = FedConfig::new(4, 0.1, 15, 2);
    let a = run_in_pool(4, &spec, &train, &test, &config);
    let b = run_in_pool(4, &spec, &train, &test, &config);
    assert_eq!(a, b);
    assert!(a.params.is_finite());
    assert_eq!(a.records.len(), 15);
    let c = run_in_pool(4, &spec, &train, &test, &FedConfig { seed: 3, ..config });
    assert_ne!(a.params, c.params);
}

fn updates_strategy() -> impl Strategy<Value = Vec<(Vec<f64>, usize)>> {
    (1usize..8, 1usize..6)
        .prop_flat_map(|(dim, k)| prop::collection::vec((prop::collection::vec(-1e6f64..1e6, dim), 1usize..5000), k))
}

fn to_updates(raw: &[(Vec<f64>, usize)]) -> Vec<(ParameterVector, usize)> {
    raw.iter()
        .map(|(v, n)| (ParameterVector::from_vec(v.clone()), *n))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn aggregate_stays_in_hull(raw in updates_strategy()) {
        let out = aggregate(&to_updates(&raw)).unwrap();
        for i in 0..out.dim() {
            let lo = raw.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
            let hi = raw.iter().map(|(v, _)| v[i]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= out[i] && out[i] <= hi);
        }
    }

    #[test]
    fn aggregate_of_identical_updates_is_identity(v in prop::collection::vec(-1e6f64..1e6, 1..10), ns in prop::collection::vec(1usize..5000, 1..6)) {
        let updates: Vec<_> = ns.iter().map(|&n| (ParameterVector::from_vec(v.clone()), n)).collect();
        prop_assert_eq!(aggregate(&updates).unwrap().into_vec(), v);
    }

    #[test]
    fn aggregate_single_update_is_identity(v in prop::collection::vec(-1e6f64..1e6, 1..10), n in 1usize..5000) {
        prop_assert_eq!(aggregate(&[(ParameterVector::from_vec(v.clone()), n)]).unwrap().into_vec(), v);
    }

    #[test]
    fn aggregate_ignores_weight_scale(raw in updates_strategy(), c in 2usize..50) {
        let a = aggregate(&to_updates(&raw)).unwrap();
        let scaled: Vec<_> = raw.iter().map(|(v, n)| (v.clone(), n * c)).collect();
        let b = aggregate(&to_updates(&scaled)).unwrap();
        for i in 0..a.dim() {
            let tol = 1e-12 * raw.iter().map(|(v, _)| v[i].abs()).fold(1.0, f64::max);
            prop_assert!((a[i] - b[i]).abs() <= tol);
        }
    }

    #[test]
    fn aggregate_matches_weighted_mean(raw in updates_strategy()) {
        let out = aggregate(&to_updates(&raw)).unwrap();
        let total: usize = raw.iter().map(|(_, n)| n).sum();
        for i in 0..out.dim() {
            let mean: f64 = raw.iter().map(|(v, n)| v[i] * *n as f64).sum::<f64>() / total as f64;
            let tol = 1e-9 * raw.iter().map(|(v, _)| v[i].abs()).fold(1.0, f64::max);
            prop_assert!((out[i] - mean).abs() <= tol);
        }
    }
}

#[test]
fn aggregate_rejects_bad_input() {
    assert!(aggregate(&[]).is_err());
    let a = ParameterVector::from_vec(vec![1.0, 2.0]);
    let b = ParameterVector::from_vec(vec![1.0]);
    assert!(aggregate(&[(a.clone(), 1), (b, 1)]).is_err());
    assert!(aggregate(&[(a, 0)]).is_err());
}
