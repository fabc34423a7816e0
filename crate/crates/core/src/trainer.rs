//! Truncated-backprop training over a stream of regenerated environments.
//!
//! One stream owns all mutable state. Each window binds the parameters onto
//! a fresh tape, rolls the agent forward, backprops the weighted loss, and
//! applies one Adam update; the recurrent state crosses windows as detached
//! values only.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TapeError, Var};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::model::{step, LossVars, ModelParams, StateSnapshot, StepInputs, StepState};
use crate::optim::Adam;
use crate::worldgen::{
    generate_environment, walk, Environment, Step, WalkPolicy, WorldGenError,
};

/// Per-term loss weights applied after the ramp.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossWeights {
    pub x: f64,
    pub next: f64,
    pub gpred: f64,
    pub p: f64,
    pub g: f64,
    pub mem: f64,
    /// L2 on grid activity; off by default.
    pub reg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            x: 1.0,
            next: 1.0,
            gpred: 1.0,
            p: 1.0,
            g: 1.0,
            mem: 1.0,
            reg: 0.0,
        }
    }
}

impl LossWeights {
    fn all(&self) -> [f64; 7] {
        [
            self.x, self.next, self.gpred, self.p, self.g, self.mem, self.reg,
        ]
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Steps per truncation window (and per gradient update).
    pub window: usize,
    /// Steps spent in each environment before regeneration.
    pub env_switch_interval: usize,
    pub total_updates: usize,
    /// Environment widths to sample uniformly.
    pub widths: Vec<usize>,
    /// Reward-indicator vertices per environment.
    pub shiny_count: usize,
    pub policy: WalkPolicy,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Updates over which the rate decays log-linearly; constant after.
    pub lr_decay_updates: usize,
    /// Updates over which non-prediction losses ramp from 0 to full weight.
    pub ramp_updates: usize,
    pub weights: LossWeights,
    pub seed: u64,
    /// Checkpoint cadence in updates; 0 keeps only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 25,
            env_switch_interval: 5000,
            total_updates: 50_000,
            widths: vec![8, 10, 12],
            shiny_count: 0,
            policy: WalkPolicy::default(),
            lr_start: 1e-3,
            lr_end: 1e-4,
            lr_decay_updates: 40_000,
            ramp_updates: 2_000,
            weights: LossWeights::default(),
            seed: 0,
            checkpoint_every: 10_000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.window == 0 {
            return Err("window must be at least 1".into());
        }
        if self.env_switch_interval < self.window {
            return Err("env_switch_interval shorter than one window".into());
        }
        if self.total_updates == 0 {
            return Err("nothing to do: total_updates is 0".into());
        }
        if self.widths.is_empty() {
            return Err("need at least one environment width".into());
        }
        if self.widths.iter().any(|&w| w < 2) {
            return Err("environment widths must be at least 2".into());
        }
        if self.weights.all().iter().any(|&w| w < 0.0) {
            return Err("loss weights must be non-negative".into());
        }
        if !(self.lr_start > 0.0 && self.lr_end > 0.0) {
            return Err("learning rates must be positive".into());
        }
        if self.lr_end > self.lr_start {
            return Err("learning rate schedule must be non-increasing".into());
        }
        Ok(())
    }
}

/// Loss values and bookkeeping for one step of a window.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct StepLoss {
    pub l_x: f64,
    pub l_next: f64,
    pub l_gpred: f64,
    pub l_p: f64,
    pub l_g: f64,
    pub l_mem: f64,
    pub l_reg: f64,
    /// False when the masked terms were zeroed for a first visit.
    pub trained_here: bool,
    pub trained_next: bool,
    pub correct_now: bool,
    pub correct_next: bool,
}

/// One rolled-out window, still holding its tape for the backward pass.
pub struct WindowRun {
    pub tape: Tape,
    pub loss_vars: Vec<LossVars>,
    pub steps: Vec<StepLoss>,
    pub snapshot: StateSnapshot,
    pub leaves: Vec<Var>,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// True at each step whose vertex was already visited earlier in the walk.
pub fn seen_before_flags(steps: &[Step]) -> Vec<bool> {
    let mut visited = HashSet::new();
    steps
        .iter()
        .map(|s| {
            let seen = visited.contains(&s.vertex);
            visited.insert(s.vertex);
            seen
        })
        .collect()
}

/// Roll `steps.len() - 1` steps on a fresh tape. `steps` carries one
/// lookahead entry beyond the window; `seen_before` is aligned with it.
/// `snapshot: None` starts a fresh episode (empty memories, learnable
/// initial grid state).
pub fn rollout_window(
    env: &Environment,
    steps: &[Step],
    seen_before: &[bool],
    snapshot: Option<&StateSnapshot>,
    params: &ModelParams,
) -> Result<WindowRun, TapeError> {
    assert!(steps.len() >= 2, "need at least one step plus lookahead");
    assert_eq!(steps.len(), seen_before.len());
    let hp = &params.hp;
    let mut tape = Tape::new();
    let mv = params.bind(&mut tape);
    let mut state = match snapshot {
        Some(s) => StepState::resume(&mut tape, hp, s),
        None => StepState::fresh(&mut tape, hp, &mv),
    };

    let mut loss_vars = Vec::with_capacity(steps.len() - 1);
    let mut step_losses = Vec::with_capacity(steps.len() - 1);
    for t in 0..steps.len() - 1 {
        let inp = StepInputs {
            action: steps[t].action,
            stimulus: steps[t].stimulus as usize,
            next_action: steps[t + 1].action,
            next_stimulus: steps[t + 1].stimulus as usize,
            shiny_here: env.is_shiny(steps[t].vertex),
            train_here: seen_before[t],
            train_next: seen_before[t + 1],
        };
        let out = step(&mut tape, hp, &mv, state, &inp)?;
        let sl = StepLoss {
            l_x: tape.value_scalar(out.losses.l_x),
            l_next: tape.value_scalar(out.losses.l_next),
            l_gpred: tape.value_scalar(out.losses.l_gpred),
            l_p: tape.value_scalar(out.losses.l_p),
            l_g: tape.value_scalar(out.losses.l_g),
            l_mem: tape.value_scalar(out.losses.l_mem),
            l_reg: tape.value_scalar(out.losses.l_reg),
            trained_here: inp.train_here,
            trained_next: inp.train_next,
            correct_now: argmax(tape.value(out.logits_now)) == inp.stimulus,
            correct_next: argmax(tape.value(out.logits_next)) == inp.next_stimulus,
        };
        debug_assert!(
            [sl.l_x, sl.l_next, sl.l_gpred, sl.l_p, sl.l_g, sl.l_mem, sl.l_reg]
                .iter()
                .all(|&l| l >= 0.0),
            "loss terms must be non-negative"
        );
        loss_vars.push(out.losses);
        step_losses.push(sl);
        state = out.state;
    }
    let snapshot = state.snapshot(&tape);
    Ok(WindowRun {
        tape,
        loss_vars,
        steps: step_losses,
        snapshot,
        leaves: mv.leaves(),
    })
}

/// Ramp factor for the non-prediction losses at a given update.
pub fn ramp_weight(schedule_step: usize, ramp_updates: usize) -> f64 {
    if ramp_updates == 0 {
        1.0
    } else {
        (schedule_step as f64 / ramp_updates as f64).min(1.0)
    }
}

/// Log-linear learning-rate decay, constant after `lr_decay_updates`.
pub fn lr_at(cfg: &TrainConfig, update: usize) -> f64 {
    let f = if cfg.lr_decay_updates == 0 {
        1.0
    } else {
        (update as f64 / cfg.lr_decay_updates as f64).min(1.0)
    };
    (cfg.lr_start.ln() + f * (cfg.lr_end.ln() - cfg.lr_start.ln())).exp()
}

/// Weighted sum of a window's loss terms. The stimulus-prediction terms
/// always carry their full weight; everything else is scaled by the ramp.
/// Zero-weight terms are skipped so they contribute exactly nothing.
pub fn compute_total_loss(
    tape: &mut Tape,
    losses: &[LossVars],
    weights: &LossWeights,
    schedule_step: usize,
    ramp_updates: usize,
) -> Var {
    let r = ramp_weight(schedule_step, ramp_updates);
    let mut total: Option<Var> = None;
    for lv in losses {
        for (w, l) in [
            (weights.x, lv.l_x),
            (weights.next, lv.l_next),
            (r * weights.gpred, lv.l_gpred),
            (r * weights.p, lv.l_p),
            (r * weights.g, lv.l_g),
            (r * weights.mem, lv.l_mem),
            (r * weights.reg, lv.l_reg),
        ] {
            if w == 0.0 {
                continue;
            }
            let term = if w == 1.0 { l } else { tape.scale(l, w) };
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
    }
    total.unwrap_or_else(|| tape.scalar(0.0))
}

/// Flags a sustained blow-up relative to the first recorded loss.
pub struct DivergenceMonitor {
    initial: Option<f64>,
    streak: usize,
    pub factor: f64,
    pub limit: usize,
}

impl DivergenceMonitor {
    pub fn new(factor: f64, limit: usize) -> Self {
        DivergenceMonitor {
            initial: None,
            streak: 0,
            factor,
            limit,
        }
    }

    pub fn initial(&self) -> f64 {
        self.initial.unwrap_or(f64::NAN)
    }

    /// Returns true once the loss has exceeded `factor` times the initial
    /// loss for `limit` consecutive records.
    pub fn record(&mut self, loss: f64) -> bool {
        let Some(init) = self.initial else {
            self.initial = Some(loss);
            return false;
        };
        if loss > self.factor * init {
            self.streak += 1;
        } else {
            self.streak = 0;
        }
        self.streak >= self.limit
    }
}

/// One metrics row per update. Cross-entropy means are over the steps that
/// actually trained the term; the rest average over the whole window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub update: usize,
    pub env_id: usize,
    pub l_x: f64,
    pub l_p: f64,
    pub l_g: f64,
    pub l_next: f64,
    pub l_mem: f64,
    pub lr: f64,
    pub acc_now: f64,
    pub acc_next: f64,
    pub l_gpred: f64,
    pub l_reg: f64,
}

pub const METRICS_HEADER: &str =
    "update,env_id,l_x,l_p,l_g,l_next,l_mem,lr,acc_now,acc_next,l_gpred,l_reg";

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.env_id,
            self.l_x,
            self.l_p,
            self.l_g,
            self.l_next,
            self.l_mem,
            self.lr,
            self.acc_now,
            self.acc_next,
            self.l_gpred,
            self.l_reg
        )
    }
}

fn aggregate_row(update: usize, env_id: usize, steps: &[StepLoss], lr: f64) -> MetricRow {
    let n = steps.len().max(1) as f64;
    let n_here = steps.iter().filter(|s| s.trained_here).count().max(1) as f64;
    let n_next = steps.iter().filter(|s| s.trained_next).count().max(1) as f64;
    let sum = |f: fn(&StepLoss) -> f64| steps.iter().map(f).sum::<f64>();
    MetricRow {
        update,
        env_id,
        l_x: sum(|s| s.l_x) / n_here,
        l_p: sum(|s| s.l_p) / n,
        l_g: sum(|s| s.l_g) / n,
        l_next: sum(|s| s.l_next) / n_next,
        l_mem: sum(|s| s.l_mem) / n,
        lr,
        acc_now: steps.iter().filter(|s| s.correct_now).count() as f64 / n,
        acc_next: steps.iter().filter(|s| s.correct_next).count() as f64 / n,
        l_gpred: sum(|s| s.l_gpred) / n_here,
        l_reg: sum(|s| s.l_reg) / n,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    World(#[from] WorldGenError),
    #[error("tape failure at update {update}: {source}")]
    Tape { update: usize, source: TapeError },
    #[error("non-finite loss at update {update}; last window: {diag}")]
    NonFinite { update: usize, diag: String },
    #[error("loss diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub updates_done: usize,
    pub envs_entered: usize,
    pub memory_resets: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub rows: Vec<MetricRow>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics_path: Option<PathBuf>,
}

fn diag_string(env_id: usize, steps: &[StepLoss]) -> String {
    let mut s = format!("env {env_id}");
    if let Some(last) = steps.last() {
        s += &format!(
            ", last step: l_x={:.4} l_next={:.4} l_gpred={:.4} l_p={:.4} l_g={:.4} l_mem={:.4}",
            last.l_x, last.l_next, last.l_gpred, last.l_p, last.l_g, last.l_mem
        );
    }
    s
}

/// Train in place, regenerating the environment every
/// `env_switch_interval` steps with both memories reset. Artifacts
/// (metrics CSV, checkpoints) are written when `out_dir` is given.
pub fn train(
    params: &mut ModelParams,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate().map_err(TrainError::Config)?;
    let mut adam = Adam::new(params);
    // stream seed decoupled from the parameter-init seed
    let mut rng = StdRng::seed_from_u64(cfg.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let windows_per_env = cfg.env_switch_interval / cfg.window;
    let mut monitor = DivergenceMonitor::new(10.0, 1000);

    let mut csv = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };

    let mut rows: Vec<MetricRow> = Vec::with_capacity(cfg.total_updates);
    let mut checkpoints = Vec::new();
    let mut update = 0;
    let mut env_id = 0;
    let mut resets = 0;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    'stream: while update < cfg.total_updates {
        env_id += 1;
        resets += 1; // fresh memories for the new environment
        let width = cfg.widths[rng.random_range(0..cfg.widths.len())];
        let env = generate_environment(width, params.hp.n_s, cfg.shiny_count, rng.random())?;
        let steps = walk(&env, cfg.env_switch_interval + 1, &cfg.policy, rng.random());
        let seen = seen_before_flags(&steps);
        let mut snapshot: Option<StateSnapshot> = None;

        for w in 0..windows_per_env {
            if update >= cfg.total_updates {
                break 'stream;
            }
            let lo = w * cfg.window;
            let hi = lo + cfg.window + 1;
            let run = rollout_window(&env, &steps[lo..hi], &seen[lo..hi], snapshot.as_ref(), params)
                .map_err(|source| TrainError::Tape { update, source })?;
            let mut tape = run.tape;
            let total =
                compute_total_loss(&mut tape, &run.loss_vars, &cfg.weights, update, cfg.ramp_updates);
            let loss_val = tape.value_scalar(total);
            if !loss_val.is_finite() {
                return Err(TrainError::NonFinite {
                    update,
                    diag: diag_string(env_id, &run.steps),
                });
            }
            if update == 0 {
                initial_loss = loss_val;
            }
            final_loss = loss_val;
            if monitor.record(loss_val) {
                return Err(TrainError::Diverged(format!(
                    "update {update}: loss {loss_val:.4e} above 10x initial {:.4e} for {} consecutive updates",
                    monitor.initial(),
                    monitor.limit
                )));
            }

            let grads = tape
                .backward(total)
                .map_err(|source| TrainError::Tape { update, source })?;
            let glist: Vec<Option<Vec<f64>>> = run
                .leaves
                .iter()
                .map(|&leaf| grads.get(leaf).map(|g| g.to_vec()))
                .collect();
            let lr = lr_at(cfg, update);
            adam.step(params, &glist, lr);
            snapshot = Some(run.snapshot);

            let row = aggregate_row(update, env_id, &run.steps, lr);
            if let Some(f) = csv.as_mut() {
                writeln!(f, "{}", row.csv_line())?;
            }
            rows.push(row);
            update += 1;

            if let Some(dir) = out_dir {
                if cfg.checkpoint_every > 0 && update % cfg.checkpoint_every == 0 {
                    let path = dir
                        .join("checkpoints")
                        .join(format!("update_{update:08}.json"));
                    Checkpoint::new(update, params.clone(), adam.clone()).save(&path)?;
                    checkpoints.push(path);
                }
            }
        }
    }

    if let Some(dir) = out_dir {
        let path = dir.join("checkpoints").join("final.json");
        Checkpoint::new(update, params.clone(), adam.clone()).save(&path)?;
        checkpoints.push(path);
    }

    Ok(TrainReport {
        updates_done: update,
        envs_entered: env_id,
        memory_resets: resets,
        initial_loss,
        final_loss,
        rows,
        checkpoints,
        metrics_path: out_dir.map(|d| d.join("metrics.csv")),
    })
}

#[cfg(test)]
mod tests;
