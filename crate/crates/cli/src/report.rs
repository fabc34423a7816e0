//! `report`: roll the artifacts of one run directory (training metrics,
//! eval summaries, analysis reports) into a single summary JSON.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::{runtime, usage, write_json, CliError};

#[derive(clap::Args, Debug)]
pub struct ReportArgs {
    /// Run directory holding train, eval, and analyze outputs.
    #[arg(long, value_name = "DIR")]
    pub run: PathBuf,

    /// Output file; defaults to <run>/summary.json.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
pub struct TrainBlock {
    pub updates: usize,
    /// Mean sensory loss over the first 1000 updates.
    pub lx_first1000_mean: f64,
    /// Mean sensory loss over the last 1000 updates.
    pub lx_last1000_mean: f64,
    /// Fractional drop between the two means.
    pub lx_drop: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_secs: Option<f64>,
}

#[derive(Serialize)]
struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainBlock>,
    eval: BTreeMap<String, Value>,
    analysis: BTreeMap<String, Value>,
}

/// Pull the named column out of a metrics CSV.
fn csv_column(text: &str, name: &str) -> Result<Vec<f64>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| usage("metrics.csv is empty"))?;
    let idx = header
        .split(',')
        .position(|h| h == name)
        .ok_or_else(|| usage(format!("metrics.csv has no '{name}' column")))?;
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let field = line
            .split(',')
            .nth(idx)
            .ok_or_else(|| usage(format!("metrics.csv row {} is short", ln + 2)))?;
        let v: f64 = field
            .parse()
            .map_err(|_| usage(format!("metrics.csv row {}: bad value '{field}'", ln + 2)))?;
        out.push(v);
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn train_block(run: &Path) -> Result<Option<TrainBlock>, CliError> {
    let metrics = run.join("metrics.csv");
    if !metrics.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&metrics)
        .map_err(|e| runtime(format!("cannot read {}: {e}", metrics.display())))?;
    let lx = csv_column(&text, "l_x")?;
    if lx.is_empty() {
        return Err(usage(format!("{} has no rows", metrics.display())));
    }
    let head = &lx[..lx.len().min(1000)];
    let tail = &lx[lx.len().saturating_sub(1000)..];
    let first = mean(head);
    let last = mean(tail);
    let wall_secs = fs::read_to_string(run.join("train_report.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<Value>(&t).ok())
        .and_then(|v| v.get("wall_secs").and_then(Value::as_f64));
    Ok(Some(TrainBlock {
        updates: lx.len(),
        lx_first1000_mean: first,
        lx_last1000_mean: last,
        lx_drop: if first != 0.0 { 1.0 - last / first } else { 0.0 },
        wall_secs,
    }))
}

fn collect_json(run: &Path, file: &str) -> Result<BTreeMap<String, Value>, CliError> {
    let mut found = BTreeMap::new();
    let entries = fs::read_dir(run)
        .map_err(|e| usage(format!("cannot read run directory {}: {e}", run.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| runtime(format!("{}: {e}", run.display())))?;
        let path = entry.path().join(file);
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path)
            .map_err(|e| runtime(format!("cannot read {}: {e}", path.display())))?;
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        found.insert(name, v);
    }
    Ok(found)
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    if !args.run.is_dir() {
        return Err(usage(format!(
            "run directory {} does not exist",
            args.run.display()
        )));
    }
    let train = train_block(&args.run)?;
    let eval = collect_json(&args.run, "summary.json")?;
    let analysis = collect_json(&args.run, "analysis_report.json")?;
    let summary = RunSummary {
        train,
        eval,
        analysis,
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| args.run.join("summary.json"));
    write_json(&out, &summary)?;
    if let Some(t) = &summary.train {
        println!(
            "train: {} updates, sensory loss {:.4} -> {:.4} ({:.1}% drop)",
            t.updates,
            t.lx_first1000_mean,
            t.lx_last1000_mean,
            100.0 * t.lx_drop
        );
    }
    println!(
        "aggregated {} eval and {} analysis blocks into {}",
        summary.eval.len(),
        summary.analysis.len(),
        out.display()
    );
    Ok(())
}
