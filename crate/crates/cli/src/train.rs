//! `train`: resolve a config, snapshot it, and drive the optimisation loop.
//! Leaves behind metrics.csv, periodic checkpoints, and a report JSON.

use std::time::Instant;

use serde::Serialize;

use gridmem::model::ModelParams;
use gridmem::trainer::{self, TrainError};

use crate::config::{self, ConfigArgs};
use crate::{runtime, usage, write_json, CliError};

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Serialize)]
struct TrainSummary {
    updates_done: usize,
    envs_entered: usize,
    memory_resets: usize,
    initial_loss: f64,
    final_loss: f64,
    wall_secs: f64,
    metrics: Option<String>,
    checkpoints: Vec<String>,
}

fn map_train_err(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::World(_) => usage(e.to_string()),
        other => runtime(other.to_string()),
    }
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.cfg)?;
    let out = cfg.out_dir.clone();
    config::write_snapshot(&out, &cfg)?;

    let mut params = ModelParams::init(cfg.model.hyperparams(), cfg.seed);
    let tc = cfg.trainer.train_config(cfg.walk.policy(), cfg.seed);
    let started = Instant::now();
    let report = trainer::train(&mut params, &tc, Some(&out)).map_err(map_train_err)?;
    let wall_secs = started.elapsed().as_secs_f64();

    let summary = TrainSummary {
        updates_done: report.updates_done,
        envs_entered: report.envs_entered,
        memory_resets: report.memory_resets,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
        wall_secs,
        metrics: report
            .metrics_path
            .as_ref()
            .map(|p| p.display().to_string()),
        checkpoints: report
            .checkpoints
            .iter()
            .map(|p| p.display().to_string())
            .collect(),
    };
    write_json(&out.join("train_report.json"), &summary)?;

    println!(
        "trained {} updates in {:.1}s across {} environments, loss {:.4} -> {:.4}",
        report.updates_done, wall_secs, report.envs_entered, report.initial_loss, report.final_loss
    );
    if let Some(p) = &report.metrics_path {
        println!("metrics: {}", p.display());
    }
    if let Some(p) = report.checkpoints.last() {
        println!("checkpoint: {}", p.display());
    }
    Ok(())
}
