//! `eval`: replay a trained model on a fresh walk and export behavioral
//! curves, per-unit rate maps, and a summary JSON with headline numbers.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use gridmem::checkpoint::Checkpoint;
use gridmem::evalmetrics::{
    build_eval_log, curve_to_csv, long_term_curve, one_shot_curve, rate_map_to_pgm,
    rate_maps_from_samples, rate_maps_to_csv, rollout_states, zero_shot_curve, CurveBin,
    EventKind, Layer, RateMapOptions, EVAL_WINDOW,
};
use gridmem::model::ModelParams;
use gridmem::worldgen::{self, Environment, Step};

use crate::config::{self, ConfigArgs, RunConfig};
use crate::{runtime, usage, write_json, write_text, CliError};

const VALID_METRICS: [&str; 4] = ["one_shot", "zero_shot", "long_term", "ratemaps"];

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Checkpoint JSON written by train.
    #[arg(long, value_name = "FILE", required_unless_present = "untrained")]
    pub checkpoint: Option<PathBuf>,

    /// Evaluate a freshly initialised model instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pub untrained: bool,

    /// Comma-separated subset of: one_shot, zero_shot, long_term, ratemaps.
    #[arg(long, value_delimiter = ',', required = true)]
    pub metrics: Vec<String>,

    /// Rate-map layers to export: grid, place, sensory. Comma separated.
    #[arg(long = "layer", value_delimiter = ',', default_value = "grid")]
    pub layers: Vec<String>,

    /// World width; defaults to the first configured training width.
    #[arg(long)]
    pub width: Option<usize>,

    /// World seed, fixing the stimulus layout.
    #[arg(long)]
    pub env_seed: Option<u64>,

    /// Pool events from this many fresh worlds (env and walk seeds advance
    /// by one per world). Rate maps always come from the first world.
    #[arg(long, default_value_t = 1)]
    pub envs: usize,

    /// Walk length; defaults to eval.walk_steps.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Walk seed; sharing it (and --start) across worlds retraces the same
    /// policy stream.
    #[arg(long)]
    pub walk_seed: Option<u64>,

    /// Fixed start vertex, so walks in different worlds share their origin.
    #[arg(long)]
    pub start: Option<usize>,

    /// Override the memory write rate before replay; 0 disables storage.
    #[arg(long, value_name = "ETA")]
    pub eta: Option<f64>,
}

#[derive(Serialize)]
struct EnvInfo {
    width: usize,
    seed: u64,
    shiny: usize,
    start: Option<usize>,
    envs: usize,
}

#[derive(Serialize)]
struct LayerInfo {
    layer: String,
    units: usize,
    uncovered_vertices: usize,
    csv: String,
    pgm_dir: String,
}

#[derive(Serialize)]
struct EventCounts {
    first_visit: usize,
    seen_edge_revisit: usize,
    novel_edge_revisit: usize,
    stay: usize,
}

#[derive(Serialize)]
struct EvalSummary {
    checkpoint: Option<String>,
    update: usize,
    eta: f64,
    env: EnvInfo,
    steps: usize,
    n_records: usize,
    events: EventCounts,
    chance: f64,
    overall_accuracy: f64,
    curves: BTreeMap<String, Vec<CurveBin>>,
    ratemaps: Vec<LayerInfo>,
}

fn parse_layer(name: &str) -> Result<Layer, CliError> {
    match name {
        "grid" => Ok(Layer::Grid),
        "place" => Ok(Layer::Place),
        "sensory" => Ok(Layer::SmoothedSensory),
        other => Err(usage(format!(
            "unknown layer '{other}' (expected grid, place, or sensory)"
        ))),
    }
}

fn check_metrics(metrics: &[String]) -> Result<(), CliError> {
    if metrics.is_empty() {
        return Err(usage(format!(
            "no metrics requested (expected any of: {})",
            VALID_METRICS.join(", ")
        )));
    }
    for m in metrics {
        if !VALID_METRICS.contains(&m.as_str()) {
            return Err(usage(format!(
                "unknown metric '{m}' (expected any of: {})",
                VALID_METRICS.join(", ")
            )));
        }
    }
    Ok(())
}

fn load_params(args: &EvalArgs, cfg: &RunConfig) -> Result<(ModelParams, usize, Option<String>), CliError> {
    if args.untrained {
        return Ok((ModelParams::init(cfg.model.hyperparams(), cfg.seed), 0, None));
    }
    let path = args.checkpoint.as_ref().expect("clap enforces checkpoint");
    let ck = Checkpoint::load(path)
        .map_err(|e| usage(format!("checkpoint {}: {e}", path.display())))?;
    Ok((ck.params, ck.update, Some(path.display().to_string())))
}

fn sample_walk(
    env: &Environment,
    args: &EvalArgs,
    cfg: &RunConfig,
    steps: usize,
    walk_seed: u64,
) -> Result<Vec<Step>, CliError> {
    let policy = cfg.walk.policy();
    match args.start {
        Some(s) => {
            if s >= env.vertex_count() {
                return Err(usage(format!(
                    "start vertex {s} out of range for a {0}x{0} world",
                    env.width
                )));
            }
            Ok(worldgen::walk_from(env, s, steps, &policy, walk_seed))
        }
        None => Ok(worldgen::walk(env, steps, &policy, walk_seed)),
    }
}

pub fn run(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.cfg)?;
    check_metrics(&args.metrics)?;
    let want = |m: &str| args.metrics.iter().any(|x| x == m);
    let layers = args
        .layers
        .iter()
        .map(|l| parse_layer(l))
        .collect::<Result<Vec<_>, _>>()?;

    let (mut params, update, checkpoint) = load_params(args, &cfg)?;
    if let Some(eta) = args.eta {
        if !(0.0..=1.0).contains(&eta) {
            return Err(usage(format!("--eta {eta} outside [0, 1]")));
        }
        params.hp.eta = eta;
    }

    let width = args.width.unwrap_or(cfg.trainer.widths[0]);
    let env_seed = args.env_seed.unwrap_or(cfg.seed.wrapping_add(1000));
    if args.envs == 0 {
        return Err(usage("--envs must be at least 1"));
    }

    let steps_n = args.steps.unwrap_or(cfg.eval.walk_steps);
    if steps_n < 2 {
        return Err(usage("--steps must be at least 2"));
    }
    let walk_seed = args.walk_seed.unwrap_or(cfg.seed.wrapping_add(2000));

    let mut logs = Vec::with_capacity(args.envs);
    let mut first: Option<(Environment, Vec<gridmem::evalmetrics::RolloutSample>)> = None;
    for e in 0..args.envs as u64 {
        let env = worldgen::generate_environment(
            width,
            params.hp.n_s,
            cfg.trainer.shiny_count,
            env_seed.wrapping_add(e),
        )
        .map_err(|err| usage(format!("world: {err}")))?;
        let steps = sample_walk(&env, args, &cfg, steps_n, walk_seed.wrapping_add(e))?;
        let samples = rollout_states(&params, &env, &steps, EVAL_WINDOW)
            .map_err(|err| runtime(format!("replay failed: {err}")))?;
        let predictions: Vec<u16> = samples.iter().map(|s| s.predicted_next).collect();
        logs.push(build_eval_log(&env, &steps, &predictions, params.hp.n_s));
        if first.is_none() {
            first = Some((env, samples));
        }
    }
    let (env, samples) = first.expect("at least one world");
    let log = gridmem::evalmetrics::EvalLog::merge(logs);
    let chance = log.chance();

    let out = cfg.out_dir.clone();
    let mut curves = BTreeMap::new();
    let mut emit_curve = |name: &str, bins: Vec<CurveBin>| -> Result<(), CliError> {
        write_text(&out.join(format!("{name}.csv")), &curve_to_csv(&bins, chance))?;
        curves.insert(name.to_string(), bins);
        Ok(())
    };
    if want("one_shot") {
        emit_curve("one_shot", one_shot_curve(&log))?;
    }
    if want("zero_shot") {
        emit_curve("zero_shot", zero_shot_curve(&log))?;
    }
    if want("long_term") {
        emit_curve("long_term", long_term_curve(&log))?;
    }

    let mut layer_infos = Vec::new();
    if want("ratemaps") {
        let opts = RateMapOptions {
            burn_in: cfg.eval.burn_in,
            min_visits: cfg.eval.min_visits,
        };
        for &layer in &layers {
            let set = rate_maps_from_samples(&env, &samples, layer, &opts);
            let csv_path = out.join(format!("ratemaps_{}.csv", layer.name()));
            write_text(&csv_path, &rate_maps_to_csv(&set))?;
            let pgm_dir = out.join(format!("ratemaps_{}_pgm", layer.name()));
            for (u, map) in set.maps.iter().enumerate() {
                write_text(&pgm_dir.join(format!("u{u:03}.pgm")), &rate_map_to_pgm(map))?;
            }
            let uncovered = set.uncovered();
            if !uncovered.is_empty() {
                eprintln!(
                    "warning: {} of {} vertices under-visited in the {} maps",
                    uncovered.len(),
                    env.vertex_count(),
                    layer.name()
                );
            }
            layer_infos.push(LayerInfo {
                layer: layer.name().to_string(),
                units: set.maps.len(),
                uncovered_vertices: uncovered.len(),
                csv: csv_path.display().to_string(),
                pgm_dir: pgm_dir.display().to_string(),
            });
        }
    }

    let events = EventCounts {
        first_visit: log.records.iter().filter(|r| r.kind == EventKind::FirstVisit).count(),
        seen_edge_revisit: log
            .records
            .iter()
            .filter(|r| r.kind == EventKind::SeenEdgeRevisit)
            .count(),
        novel_edge_revisit: log
            .records
            .iter()
            .filter(|r| r.kind == EventKind::NovelEdgeRevisit)
            .count(),
        stay: log.records.iter().filter(|r| r.kind == EventKind::Stay).count(),
    };
    let correct = log
        .records
        .iter()
        .filter(|r| r.predicted == r.actual)
        .count();
    let summary = EvalSummary {
        checkpoint,
        update,
        eta: params.hp.eta,
        env: EnvInfo {
            width,
            seed: env_seed,
            shiny: env.shiny.len(),
            start: args.start,
            envs: args.envs,
        },
        steps: steps_n,
        n_records: log.records.len(),
        events,
        chance,
        overall_accuracy: correct as f64 / log.records.len().max(1) as f64,
        curves,
        ratemaps: layer_infos,
    };
    write_json(&out.join("summary.json"), &summary)?;

    println!(
        "evaluated {} steps over {} {width}x{width} world(s): accuracy {:.3} (chance {:.3})",
        steps_n * args.envs,
        args.envs,
        summary.overall_accuracy,
        chance
    );
    println!("summary: {}", out.join("summary.json").display());
    Ok(())
}
