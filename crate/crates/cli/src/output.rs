//! CSV/JSON writers. Reals are written with 17 significant digits in
//! scientific notation, so identical runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use fedscale::fedavg::RoundRecord;
use fedscale::harness::SweepReport;

pub const METRICS_HEADER: [&str; 8] = [
    "task",
    "model",
    "K",
    "seed",
    "round",
    "accuracy",
    "loss",
    "wall_seconds",
];
pub const SWEEP_HEADER: [&str; 4] = ["K", "final_accuracy_at_budget", "rounds_to_target", "diverged"];
pub const PLOT_HEADER: [&str; 3] = ["K", "round", "accuracy"];

pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

/// Run identity columns of a metrics row.
pub struct RunLabel<'a> {
    pub task: &'a str,
    pub model: &'a str,
    pub num_clients: usize,
    pub seed: u64,
}

pub fn write_curve(path: &Path, label: &RunLabel, records: &[RoundRecord], timing: bool) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in records {
        w.write_record([
            label.task.to_string(),
            label.model.to_string(),
            label.num_clients.to_string(),
            label.seed.to_string(),
            r.round.to_string(),
            real(r.test_accuracy),
            real(r.test_loss),
            real(if timing { r.wall_seconds } else { 0.0 }),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for row in &report.rows {
        w.write_record([
            row.num_clients.to_string(),
            row.accuracy_at_budget.map(real).unwrap_or_default(),
            row.rounds_to_target.round().map(|r| r.to_string()).unwrap_or_default(),
            u8::from(row.diverged).to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    let mut f = fs::OpenOptions::new().append(true).open(path)?;
    writeln!(f, "# random_baseline={}", report.random_baseline)?;
    for b in &report.baselines {
        match (b.accuracy, b.target) {
            (Some(a), Some(t)) => {
                writeln!(f, "# baseline_accuracy={}", real(a))?;
                writeln!(f, "# target_accuracy={}", real(t))?;
            }
            _ => writeln!(f, "# baseline_accuracy=")?,
        }
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}
