//! `gen-env`: sample a graph world (and optionally a walk) to JSON, mostly
//! for inspection and for feeding fixed worlds into external tooling.

use std::path::PathBuf;

use serde::Serialize;

use gridmem::worldgen::{self, Step};

use crate::config::{self, ConfigArgs};
use crate::{usage, write_json, CliError};

#[derive(clap::Args, Debug)]
pub struct GenEnvArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,

    /// Board width; the world has width x width vertices. Defaults to the
    /// first configured training width.
    #[arg(long)]
    pub width: Option<usize>,

    /// Shiny vertices to place; defaults to trainer.shiny_count.
    #[arg(long)]
    pub shiny: Option<usize>,

    /// Also sample a walk of this many steps and embed it in the output.
    #[arg(long, value_name = "STEPS")]
    pub walk: Option<usize>,

    /// Output file; defaults to <out_dir>/env.json.
    #[arg(long, value_name = "FILE")]
    pub file: Option<PathBuf>,
}

#[derive(Serialize)]
struct EnvOutput {
    width: usize,
    n_s: usize,
    seed: u64,
    stimuli: Vec<u16>,
    shiny: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    walk: Option<Vec<Step>>,
}

pub fn run(args: &GenEnvArgs) -> Result<(), CliError> {
    let cfg = config::resolve(&args.cfg)?;
    let width = args.width.unwrap_or(cfg.trainer.widths[0]);
    let shiny = args.shiny.unwrap_or(cfg.trainer.shiny_count);
    let env = worldgen::generate_environment(width, cfg.model.n_s, shiny, cfg.seed)
        .map_err(|e| usage(format!("world: {e}")))?;
    let walk = match args.walk {
        Some(n) if n >= 1 => Some(worldgen::walk(
            &env,
            n,
            &cfg.walk.policy(),
            cfg.seed.wrapping_add(0x57A1C),
        )),
        Some(_) => return Err(usage("--walk needs at least 1 step")),
        None => None,
    };
    let out = EnvOutput {
        width,
        n_s: cfg.model.n_s,
        seed: cfg.seed,
        stimuli: env.stimuli.clone(),
        shiny: env.shiny.clone(),
        walk,
    };
    let path = args
        .file
        .clone()
        .unwrap_or_else(|| cfg.out_dir.join("env.json"));
    write_json(&path, &out)?;
    println!(
        "wrote {} ({width}x{width} world, {} stimuli, {} shiny)",
        path.display(),
        cfg.model.n_s,
        env.shiny.len()
    );
    Ok(())
}
