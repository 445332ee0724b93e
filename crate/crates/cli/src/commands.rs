use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fedscale::fedavg::{run_training, RoundRecord};
use fedscale::gradcheck::{self, DEFAULT_ABS_TOL, DEFAULT_REL_TOL, DEFAULT_STEP};
use fedscale::harness::client_sweep;
use fedscale::model::{self, Batch};
use fedscale::{load_csv, split_train_test, synth_generate, Dataset, Example, ModelSpec, ParameterVector};
use rand::Rng;
use serde_json::json;

use crate::config::{DataSource, RunConfig, TestSource};
use crate::output::{self, RunLabel, PLOT_HEADER};
use crate::Failure;

fn setup_error(e: fedscale::Error) -> Failure {
    match e {
        fedscale::Error::Config(_) | fedscale::Error::Usage(_) => Failure::Usage(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

/// Loads (or generates) the train/test datasets and encodes them for the model.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<Example>, Vec<Example>), Failure> {
    let (train, test): (Dataset, Dataset) = match (&cfg.data, &cfg.test) {
        (DataSource::Synth(spec), TestSource::Split(frac)) => {
            let all = synth_generate(spec).map_err(setup_error)?;
            split_train_test(&all, *frac, cfg.seed).map_err(setup_error)?
        }
        (DataSource::Synth(spec), TestSource::Csv(path)) => {
            let train = synth_generate(spec).map_err(setup_error)?;
            let schema = fedscale::CsvSchema::simple(spec.num_classes);
            (train, load_csv(path, &schema).map_err(setup_error)?)
        }
        (DataSource::Csv { path, schema }, TestSource::Split(frac)) => {
            let all = load_csv(path, schema).map_err(setup_error)?;
            split_train_test(&all, *frac, cfg.seed).map_err(setup_error)?
        }
        (DataSource::Csv { path, schema }, TestSource::Csv(test_path)) => (
            load_csv(path, schema).map_err(setup_error)?,
            load_csv(test_path, schema).map_err(setup_error)?,
        ),
    };
    let train = cfg.model.encode(&train).map_err(setup_error)?;
    let test = cfg.model.encode(&test).map_err(setup_error)?;
    Ok((train, test))
}

fn prepare_out_dir(cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .map_err(Failure::Runtime)?;
    output::write_text(&cfg.out_dir.join("resolved_config.txt"), &cfg.resolved_text()).map_err(Failure::Runtime)
}

fn config_echo(cfg: &RunConfig) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = cfg
        .resolved_pairs()
        .iter()
        .map(|(k, v)| (k.clone(), json!(v)))
        .collect();
    serde_json::Value::Object(map)
}

fn without_timing(records: &mut [RoundRecord]) {
    records.iter_mut().for_each(|r| r.wall_seconds = 0.0);
}

pub fn train(cfg: &RunConfig, timing: bool) -> Result<(), Failure> {
    let (train, test) = load_data(cfg)?;
    prepare_out_dir(cfg)?;
    let run = run_training(&cfg.model, &train, &test, &cfg.fed).map_err(setup_error)?;
    let label = RunLabel {
        task: &cfg.task,
        model: cfg.model.kind_name(),
        num_clients: cfg.fed.num_clients,
        seed: cfg.seed,
    };
    output::write_curve(&cfg.out_dir.join("curve.csv"), &label, &run.records, timing).map_err(Failure::Runtime)?;
    let last = run.final_record();
    let summary = json!({
        "final_accuracy": last.map(|r| r.test_accuracy),
        "final_loss": last.map(|r| r.test_loss),
        "final_round": last.map(|r| r.round),
        "params_dim": run.params.dim(),
        "diverged_at": run.diverged_at,
        "config": config_echo(cfg),
    });
    output::write_json(&cfg.out_dir.join("final.json"), &summary).map_err(Failure::Runtime)?;
    match last {
        Some(r) => println!(
            "round {}: accuracy {:.4} loss {:.4}",
            r.round, r.test_accuracy, r.test_loss
        ),
        None => println!("no evaluated rounds"),
    }
    if let Some(round) = run.diverged_at {
        return Err(Failure::Runtime(anyhow::anyhow!(
            "training diverged after round {round}"
        )));
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, timing: bool) -> Result<(), Failure> {
    let plan = cfg.plan().map_err(|e| Failure::Usage(e.into()))?;
    let (train, test) = load_data(cfg)?;
    prepare_out_dir(cfg)?;
    let mut report = client_sweep(&plan, &train, &test).map_err(setup_error)?;
    if !timing {
        report.rows.iter_mut().for_each(|r| without_timing(&mut r.curve));
    }
    let curves = cfg.out_dir.join("curves");
    fs::create_dir_all(&curves).map_err(|e| Failure::Runtime(e.into()))?;
    for row in &report.rows {
        let label = RunLabel {
            task: &cfg.task,
            model: cfg.model.kind_name(),
            num_clients: row.num_clients,
            seed: row.seed,
        };
        let path = curves.join(format!("curve_K{}.csv", row.num_clients));
        output::write_curve(&path, &label, &row.curve, timing).map_err(Failure::Runtime)?;
    }
    output::write_sweep(&cfg.out_dir.join("sweep.csv"), &report).map_err(Failure::Runtime)?;
    let json = report.to_json().map_err(|e| Failure::Runtime(e.into()))?;
    output::write_text(&cfg.out_dir.join("report.json"), &(json + "\n")).map_err(Failure::Runtime)?;
    for row in &report.rows {
        let rtt = row
            .rounds_to_target
            .round()
            .map_or_else(|| "FAILURE".to_string(), |r| r.to_string());
        let acc = row
            .accuracy_at_budget
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        println!(
            "K={:<3} accuracy@{}={} rounds_to_target={}",
            row.num_clients, plan.baseline_rounds, acc, rtt
        );
    }
    println!("random_baseline={}", report.random_baseline);
    Ok(())
}

/// Parameters the gradient check is evaluated at: the model's own
/// initialization, except for the all-zero softmax start which is replaced by
/// a seeded uniform draw in [-0.5, 0.5).
fn gradcheck_params(spec: &ModelSpec, seed: u64) -> Result<ParameterVector, Failure> {
    let p = model::init_params(spec, seed).map_err(setup_error)?;
    Ok(match spec {
        ModelSpec::SoftmaxRegression(_) => {
            let mut rng = fedscale::rng::seeded(seed);
            ParameterVector::from_vec((0..p.dim()).map(|_| rng.gen_range(-0.5..0.5)).collect())
        }
        ModelSpec::TinyTransformer(_) => p,
    })
}

pub fn gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<(), Failure> {
    let (train, _) = load_data(cfg)?;
    let n = cfg.gradcheck_examples.min(train.len());
    let batch = Batch::from_slice(&train[..n]).map_err(setup_error)?;
    let params = gradcheck_params(&cfg.model, cfg.seed)?;
    let mut analytic = model::gradient(&cfg.model, &params, &batch).map_err(setup_error)?;
    if corrupt {
        // Perturb the largest-magnitude coordinate by 10%.
        let slice = analytic.as_mut_slice();
        let i = (0..slice.len())
            .max_by(|&a, &b| slice[a].abs().total_cmp(&slice[b].abs()))
            .unwrap_or(0);
        slice[i] *= 1.1;
    }
    let numeric = gradcheck::finite_difference(&cfg.model, &params, &batch, DEFAULT_STEP).map_err(setup_error)?;
    let report = gradcheck::compare(&analytic, &numeric, DEFAULT_REL_TOL, DEFAULT_ABS_TOL);
    println!(
        "model={} params={} examples={} max_rel_error={:.3e}",
        cfg.model.kind_name(),
        params.dim(),
        n,
        report.max_rel_error
    );
    if report.passed() {
        Ok(())
    } else {
        let worst = report.worst_index.unwrap_or(0);
        Err(Failure::Runtime(anyhow::anyhow!(
            "gradient check failed on {} coordinates; worst coordinate {worst}: analytic {} vs numeric {}",
            report.failures,
            analytic[worst],
            numeric[worst]
        )))
    }
}

fn curve_key(name: &str) -> Option<usize> {
    name.strip_prefix("curve_K")?.strip_suffix(".csv")?.parse().ok()
}

/// Merges `<sweep_dir>/curves/curve_K*.csv` into one long-format file.
pub fn export_plotdata(sweep_dir: &Path, out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    let curves = sweep_dir.join("curves");
    let entries = fs::read_dir(&curves)
        .with_context(|| format!("no curves directory at {}", curves.display()))
        .map_err(Failure::Usage)?;
    let mut files = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Failure::Runtime(e.into()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(k) = curve_key(&name) {
            files.insert(k, entry.path());
        }
    }
    if files.is_empty() {
        return Err(Failure::Usage(anyhow::anyhow!(
            "no curve_K*.csv files in {}",
            curves.display()
        )));
    }
    let mut rows: Vec<PlotRow> = Vec::new();
    for path in files.values() {
        read_curve(path, &mut rows).map_err(Failure::Runtime)?;
    }
    rows.sort_by_key(|r| (r.num_clients, r.round));

    let out_path = match out {
        Some(dir) => {
            fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.into()))?;
            dir.join("plotdata.csv")
        }
        None => sweep_dir.join("plotdata.csv"),
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&out_path)
        .map_err(|e| Failure::Runtime(e.into()))?;
    let write = |w: &mut csv::Writer<fs::File>| -> anyhow::Result<()> {
        w.write_record(PLOT_HEADER)?;
        for r in &rows {
            w.write_record(&r.fields)?;
        }
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(Failure::Runtime)?;
    Ok(out_path)
}

struct PlotRow {
    num_clients: usize,
    round: usize,
    /// K, round and accuracy exactly as they appear in the source curve.
    fields: [String; 3],
}

fn read_curve(path: &Path, rows: &mut Vec<PlotRow>) -> anyhow::Result<()> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != output::METRICS_HEADER {
        bail!("{}: unexpected header", path.display());
    }
    for rec in rdr.records() {
        let rec = rec?;
        let k_text = &rec[2];
        let round_text = &rec[4];
        let k: usize = k_text.parse().with_context(|| format!("{}: bad K", path.display()))?;
        let round: usize = round_text
            .parse()
            .with_context(|| format!("{}: bad round", path.display()))?;
        rows.push(PlotRow {
            num_clients: k,
            round,
            fields: [k_text.to_string(), round_text.to_string(), rec[5].to_string()],
        });
    }
    Ok(())
}
