//! Layered run configuration: a named profile supplies every default, an
//! optional TOML or JSON file overrides it, repeatable `--set key=value`
//! flags override the file, and dedicated flags (`--seed`, `--out`) win last.
//! Unknown keys are rejected wherever they appear.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use gridmem::hebbmem::AttractorConfig;
use gridmem::model::Hyperparams;
use gridmem::remapanalysis::{AnalysisConfig, FilterThresholds, MeasureKind};
use gridmem::trainer::{LossWeights, TrainConfig};
use gridmem::worldgen::WalkPolicy;

use crate::{usage, CliError};

/// File name of the resolved-config snapshot written into each run directory.
pub const SNAPSHOT_FILE: &str = "config.resolved.json";

/// Shared configuration flags; every subcommand flattens these.
#[derive(clap::Args, Clone, Debug)]
pub struct ConfigArgs {
    /// TOML or JSON config file layered over the profile defaults.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Named settings bundle: `paper` is full scale, `smoke` is desk scale.
    #[arg(long, default_value = "paper", value_parser = ["paper", "smoke"])]
    pub profile: String,

    /// Dotted-key override applied after the config file, e.g.
    /// `--set trainer.total_updates=100`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    /// Master seed; model init, walks, and shuffles all derive from it.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Output directory, overriding the config's `out_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl Default for ConfigArgs {
    fn default() -> Self {
        ConfigArgs {
            config: None,
            profile: "paper".into(),
            set: Vec::new(),
            seed: None,
            out: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed.
    pub seed: u64,
    /// Where commands write their artifacts.
    pub out_dir: PathBuf,
    pub model: ModelSection,
    pub trainer: TrainerSection,
    pub walk: WalkSection,
    pub eval: EvalSection,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/paper"),
            model: ModelSection::default(),
            trainer: TrainerSection::default(),
            walk: WalkSection::default(),
            eval: EvalSection::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

/// Network dimensions and memory constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Stimulus alphabet size.
    pub n_s: usize,
    /// Compressed stimulus classes per band slot.
    pub n_s_star: usize,
    /// Structural phases per frequency band, slowest first.
    pub n_phase: Vec<usize>,
    /// Negative-side slope of the leaky nonlinearities.
    pub slope: f64,
    /// Lower bound on precision denominators.
    pub sigma_floor: f64,
    /// Memory forgetting rate per store.
    pub lambda: f64,
    /// Memory write rate; 0 disables storage.
    pub eta: f64,
    /// Enable the reward-flavoured stimulus channel.
    pub shiny: bool,
    /// Hidden width of the action-conditioned transition net.
    pub transition_hidden: usize,
    /// Hidden width of the decoder net.
    pub decoder_hidden: usize,
    /// Hidden width of the memory-readout net.
    pub mem_hidden: usize,
    /// Attractor state decay, in (0, 1].
    pub attractor_kappa: f64,
    /// Attractor settling iterations.
    pub attractor_iters: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let hp = Hyperparams::default();
        ModelSection {
            n_s: hp.n_s,
            n_s_star: hp.n_s_star,
            n_phase: hp.n_phase.clone(),
            slope: hp.slope,
            sigma_floor: hp.sigma_floor,
            lambda: hp.lambda,
            eta: hp.eta,
            shiny: hp.shiny,
            transition_hidden: hp.transition_hidden,
            decoder_hidden: hp.decoder_hidden,
            mem_hidden: hp.mem_hidden,
            attractor_kappa: hp.attractor.kappa,
            attractor_iters: hp.attractor.iters,
        }
    }
}

impl ModelSection {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            n_s: self.n_s,
            n_s_star: self.n_s_star,
            n_phase: self.n_phase.clone(),
            slope: self.slope,
            attractor: AttractorConfig {
                kappa: self.attractor_kappa,
                iters: self.attractor_iters,
                slope: self.slope,
            },
            sigma_floor: self.sigma_floor,
            lambda: self.lambda,
            eta: self.eta,
            shiny: self.shiny,
            transition_hidden: self.transition_hidden,
            decoder_hidden: self.decoder_hidden,
            mem_hidden: self.mem_hidden,
        }
    }
}

/// Optimisation schedule and curriculum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    /// Backprop truncation window, in steps.
    pub window: usize,
    /// Steps spent in each environment before switching.
    pub env_switch_interval: usize,
    /// Gradient updates to run.
    pub total_updates: usize,
    /// Board widths sampled per environment.
    pub widths: Vec<usize>,
    /// Shiny vertices per environment.
    pub shiny_count: usize,
    /// Learning rate at update 0.
    pub lr_start: f64,
    /// Learning rate after the decay phase.
    pub lr_end: f64,
    /// Updates over which the rate decays log-linearly.
    pub lr_decay_updates: usize,
    /// Updates over which auxiliary losses ramp in.
    pub ramp_updates: usize,
    /// Checkpoint cadence, in updates.
    pub checkpoint_every: usize,
    pub weights: WeightsSection,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let tc = TrainConfig::default();
        TrainerSection {
            window: tc.window,
            env_switch_interval: tc.env_switch_interval,
            total_updates: tc.total_updates,
            widths: tc.widths.clone(),
            shiny_count: tc.shiny_count,
            lr_start: tc.lr_start,
            lr_end: tc.lr_end,
            lr_decay_updates: tc.lr_decay_updates,
            ramp_updates: tc.ramp_updates,
            checkpoint_every: tc.checkpoint_every,
            weights: WeightsSection::default(),
        }
    }
}

impl TrainerSection {
    pub fn train_config(&self, policy: WalkPolicy, seed: u64) -> TrainConfig {
        TrainConfig {
            window: self.window,
            env_switch_interval: self.env_switch_interval,
            total_updates: self.total_updates,
            widths: self.widths.clone(),
            shiny_count: self.shiny_count,
            policy,
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            lr_decay_updates: self.lr_decay_updates,
            ramp_updates: self.ramp_updates,
            weights: self.weights.loss_weights(),
            seed,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

/// Loss term weights; auxiliary terms still ramp in over `ramp_updates`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightsSection {
    pub x: f64,
    pub next: f64,
    pub gpred: f64,
    pub p: f64,
    pub g: f64,
    pub mem: f64,
    pub reg: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = LossWeights::default();
        WeightsSection {
            x: w.x,
            next: w.next,
            gpred: w.gpred,
            p: w.p,
            g: w.g,
            mem: w.mem,
            reg: w.reg,
        }
    }
}

impl WeightsSection {
    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            x: self.x,
            next: self.next,
            gpred: self.gpred,
            p: self.p,
            g: self.g,
            mem: self.mem,
            reg: self.reg,
        }
    }
}

/// Random-walk policy used by training and evaluation walks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkSection {
    /// Extra weight on repeating the previous direction.
    pub straight_bias: f64,
    /// Extra weight on moves that hug the border.
    pub border_bias: f64,
    /// Extra weight on moves toward shiny vertices.
    pub shiny_bias: f64,
    /// Probability of staying put, resolved before the directional draw.
    pub stay_prob: f64,
}

impl Default for WalkSection {
    fn default() -> Self {
        let p = WalkPolicy::default();
        WalkSection {
            straight_bias: p.straight_bias,
            border_bias: p.border_bias,
            shiny_bias: p.shiny_bias,
            stay_prob: p.stay_prob,
        }
    }
}

impl WalkSection {
    pub fn policy(&self) -> WalkPolicy {
        WalkPolicy {
            straight_bias: self.straight_bias,
            border_bias: self.border_bias,
            shiny_bias: self.shiny_bias,
            stay_prob: self.stay_prob,
        }
    }
}

/// Replay-evaluation knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Walk length replayed per evaluation.
    pub walk_steps: usize,
    /// Steps discarded before binning rate maps.
    pub burn_in: usize,
    /// Minimum post-burn-in visits before a vertex bin is trusted.
    pub min_visits: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            walk_steps: 20_000,
            burn_in: gridmem::evalmetrics::MAP_BURN_IN,
            min_visits: gridmem::evalmetrics::MIN_VISITS,
        }
    }
}

/// Remapping-analysis knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    /// `gridAtPlace`, `minDist`, or `both`.
    pub measure: String,
    /// Evaluate grid values on fitted ideal patterns instead of raw maps.
    pub use_ideal_fits: bool,
    /// Shuffle iterations for null distributions; at least 100.
    pub n_shuffles: usize,
    /// Minimum admitted grid-place pairs for a correlation.
    pub min_pairs: usize,
    /// Admit grid units only above this score (unset admits all).
    pub score_min: Option<f64>,
    /// Admit grid units only at or below this fitted scale (unset admits all).
    pub scale_max: Option<f64>,
    /// Admit place units only at least this far from the border, in bins.
    pub border_margin: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let th = FilterThresholds::model_maps();
        AnalysisSection {
            measure: "gridAtPlace".into(),
            use_ideal_fits: false,
            n_shuffles: 1000,
            min_pairs: 10,
            score_min: th.score_min,
            scale_max: th.scale_max,
            border_margin: th.border_margin,
        }
    }
}

impl AnalysisSection {
    pub fn thresholds(&self) -> FilterThresholds {
        FilterThresholds {
            score_min: self.score_min,
            scale_max: self.scale_max,
            border_margin: self.border_margin,
        }
    }

    /// Build the core config for one measure. The peak-distance measure
    /// always needs ideal fits, so it forces them on.
    pub fn analysis_config(&self, measure: MeasureKind, seed: u64) -> AnalysisConfig {
        AnalysisConfig {
            measure,
            use_ideal_fits: self.use_ideal_fits || measure == MeasureKind::MinDist,
            thresholds: self.thresholds(),
            n_shuffles: self.n_shuffles,
            seed,
            min_pairs: self.min_pairs,
        }
    }
}

/// Parse a measure name, where `both` expands to the two supported measures.
pub fn measure_kinds(name: &str) -> Result<Vec<MeasureKind>, CliError> {
    match name {
        "gridAtPlace" => Ok(vec![MeasureKind::GridAtPlace]),
        "minDist" => Ok(vec![MeasureKind::MinDist]),
        "both" => Ok(vec![MeasureKind::GridAtPlace, MeasureKind::MinDist]),
        other => Err(usage(format!(
            "unknown measure '{other}' (expected gridAtPlace, minDist, or both)"
        ))),
    }
}

impl RunConfig {
    /// Desk-scale bundle: small model, one small board, 500 updates.
    pub fn smoke() -> RunConfig {
        let mut cfg = RunConfig {
            out_dir: PathBuf::from("runs/smoke"),
            ..RunConfig::default()
        };
        cfg.model.n_s = 12;
        cfg.model.n_s_star = 6;
        cfg.model.n_phase = vec![6, 5, 4];
        cfg.trainer.total_updates = 500;
        cfg.trainer.env_switch_interval = 250;
        cfg.trainer.widths = vec![6];
        cfg.trainer.lr_decay_updates = 400;
        cfg.trainer.ramp_updates = 50;
        cfg.trainer.checkpoint_every = 250;
        cfg.eval.walk_steps = 3000;
        cfg.analysis.n_shuffles = 200;
        cfg
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model
            .hyperparams()
            .validate()
            .map_err(|e| usage(format!("model config: {e}")))?;
        self.trainer
            .train_config(self.walk.policy(), self.seed)
            .validate()
            .map_err(|e| usage(format!("trainer config: {e}")))?;
        measure_kinds(&self.analysis.measure)?;
        if self.analysis.n_shuffles < 100 {
            return Err(usage("analysis.n_shuffles must be at least 100"));
        }
        if self.analysis.min_pairs < 2 {
            return Err(usage("analysis.min_pairs must be at least 2"));
        }
        if self.eval.walk_steps < self.eval.burn_in + 2 {
            return Err(usage("eval.walk_steps must exceed eval.burn_in by at least 2"));
        }
        Ok(())
    }
}

pub fn profile(name: &str) -> Result<RunConfig, CliError> {
    match name {
        "paper" => Ok(RunConfig::default()),
        "smoke" => Ok(RunConfig::smoke()),
        other => Err(usage(format!("unknown profile '{other}' (expected paper or smoke)"))),
    }
}

/// Read a config file into a JSON tree, keyed off the file extension.
pub fn load_config_value(path: &Path) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    } else {
        let v: toml::Value = toml::from_str(&text)
            .map_err(|e| usage(format!("{}: {e}", path.display())))?;
        serde_json::to_value(v).map_err(|e| usage(format!("{}: {e}", path.display())))
    }
}

/// Recursive override: tables merge key by key, everything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Parse the value side of `--set`: valid JSON is taken as is, anything
/// else becomes a string, so `--set analysis.measure=minDist` works bare.
fn parse_set_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn apply_set(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| usage(format!("--set needs KEY=VALUE, got '{spec}'")))?;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(usage(format!("--set key '{key}' has an empty segment")));
    }
    let mut node = &mut *tree;
    for (i, part) in parts[..parts.len() - 1].iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| {
            usage(format!("--set {key}: '{}' is not a table", parts[..=i].join(".")))
        })?;
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(serde_json::Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| usage(format!("--set {key}: parent is not a table")))?;
    obj.insert(parts[parts.len() - 1].to_string(), parse_set_value(raw));
    Ok(())
}

/// Resolve the full configuration for one command invocation.
pub fn resolve(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let base = profile(&args.profile)?;
    let mut tree = serde_json::to_value(&base).expect("config serializes");
    if let Some(path) = &args.config {
        merge(&mut tree, load_config_value(path)?);
    }
    for spec in &args.set {
        apply_set(&mut tree, spec)?;
    }
    let mut cfg: RunConfig =
        serde_json::from_value(tree).map_err(|e| usage(format!("bad config: {e}")))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Write the resolved config into `dir` so the run can be replayed exactly.
pub fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(SNAPSHOT_FILE);
    let text = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(&path, text + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

/// Load a snapshot (or any config file) as a complete RunConfig.
pub fn load_snapshot(path: &Path) -> Result<RunConfig, CliError> {
    let tree = load_config_value(path)?;
    let cfg: RunConfig = serde_json::from_value(tree)
        .map_err(|e| usage(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
