//! One step of the agent: observe, infer, remember, predict.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, Tape, TapeError, Var};
use crate::hebbmem::{attract, store, store_inference};
use crate::worldgen::Action;

use super::ops::{
    combine_precision, compress, conjunction, decode, grid_drive, grid_transition,
    grid_transition_generative, mem_to_grid, normalize_band, sensory_broadcast, sigma_path,
    smooth_band,
};
use super::params::{Hyperparams, ModelVars};

/// Recurrent state between steps. All fields live on the current tape; at
/// window boundaries they are detached through [`StateSnapshot`].
pub struct StepState {
    /// Inferred grid code of the previous step (or the learnable initial
    /// code at episode start).
    pub g: Var,
    /// Smoothed compressed stimulus, one vector per frequency band.
    pub x_bands: Vec<Var>,
    /// Generative memory.
    pub mem: Var,
    /// Inference (sensory-cued) memory.
    pub mem_star: Var,
    /// Retrieval behind the previous step's next-stimulus prediction. It
    /// doubles as this step's generated place code, so it is reused rather
    /// than recomputed. Absent right after a boundary.
    pub p_hat_next: Option<Var>,
}

/// Detached copy of the recurrent state.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub g: Vec<f64>,
    pub x_bands: Vec<Vec<f64>>,
    pub mem: Vec<f64>,
    pub mem_star: Vec<f64>,
}

impl StepState {
    /// Episode start: learnable initial grid code, everything else zero.
    pub fn fresh(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars) -> StepState {
        let n = hp.place_total();
        let x_bands = (0..hp.frequencies())
            .map(|_| tape.constant(Shape::Vector(hp.n_s_star), vec![0.0; hp.n_s_star]))
            .collect();
        StepState {
            g: mv.g_init,
            x_bands,
            mem: tape.constant(Shape::Matrix(n, n), vec![0.0; n * n]),
            mem_star: tape.constant(Shape::Matrix(n, n), vec![0.0; n * n]),
            p_hat_next: None,
        }
    }

    /// Rebuild state on a new tape from detached values. Gradients stop at
    /// the boundary; the generated place code is recomputed on first use.
    pub fn resume(tape: &mut Tape, hp: &Hyperparams, snap: &StateSnapshot) -> StepState {
        let n = hp.place_total();
        assert_eq!(snap.g.len(), hp.grid_total());
        assert_eq!(snap.mem.len(), n * n);
        StepState {
            g: tape.constant(Shape::Vector(snap.g.len()), snap.g.clone()),
            x_bands: snap
                .x_bands
                .iter()
                .map(|b| tape.constant(Shape::Vector(b.len()), b.clone()))
                .collect(),
            mem: tape.constant(Shape::Matrix(n, n), snap.mem.clone()),
            mem_star: tape.constant(Shape::Matrix(n, n), snap.mem_star.clone()),
            p_hat_next: None,
        }
    }

    pub fn snapshot(&self, tape: &Tape) -> StateSnapshot {
        StateSnapshot {
            g: tape.value(self.g).to_vec(),
            x_bands: self.x_bands.iter().map(|&b| tape.value(b).to_vec()).collect(),
            mem: tape.value(self.mem).to_vec(),
            mem_star: tape.value(self.mem_star).to_vec(),
        }
    }
}

/// What the agent experiences at one step, plus the lookahead needed for the
/// next-stimulus prediction loss.
#[derive(Clone, Copy, Debug)]
pub struct StepInputs {
    /// Action that brought the agent to the current vertex.
    pub action: Action,
    pub stimulus: usize,
    /// Action it will take next.
    pub next_action: Action,
    pub next_stimulus: usize,
    /// Current vertex carries the reward indicator (only read in the
    /// indicator configuration).
    pub shiny_here: bool,
    /// False on the first ever visit to the current vertex; masks the
    /// losses that score reconstruction of this step's stimulus.
    pub train_here: bool,
    /// Same for the upcoming vertex; masks the prediction loss.
    pub train_next: bool,
}

/// Per-step loss terms, already first-visit masked where applicable.
/// All scalars on the tape.
#[derive(Clone, Copy)]
pub struct LossVars {
    /// Cross entropy of the stimulus decoded from the inferred place code.
    pub l_x: Var,
    /// Cross entropy of the predicted next stimulus.
    pub l_next: Var,
    /// Cross entropy of the stimulus decoded from a memory retrieval cued
    /// by the inferred grid code against the pre-step memory.
    pub l_gpred: Var,
    /// Squared error between inferred and generated place codes.
    pub l_p: Var,
    /// Squared error between inferred and path-integrated grid codes.
    pub l_g: Var,
    /// Squared error between inferred and sensory-retrieved place codes.
    pub l_mem: Var,
    /// Squared norm of the inferred grid code.
    pub l_reg: Var,
}

pub struct StepOutput {
    pub state: StepState,
    pub losses: LossVars,
    pub g_inf: Var,
    pub p_inf: Var,
    /// Logits for the current stimulus (diagnostic).
    pub logits_now: Var,
    /// Logits for the next stimulus, formed before it is observed.
    pub logits_next: Var,
}

fn masked(tape: &mut Tape, loss: Var, keep: bool) -> Var {
    tape.scale(loss, if keep { 1.0 } else { 0.0 })
}

/// Run one step of inference, memory update, and prediction.
///
/// Order matters: every retrieval sees the memory as it stood before this
/// step's stores, except the next-stimulus prediction which deliberately
/// includes them.
pub fn step(
    tape: &mut Tape,
    hp: &Hyperparams,
    mv: &ModelVars,
    state: StepState,
    inputs: &StepInputs,
) -> Result<StepOutput, TapeError> {
    let place_mask = hp.place_mask();
    let att = &hp.attractor;

    // Sensory stream: compress, smooth each band, normalise.
    let c = tape.constant(
        Shape::Vector(hp.n_s_star),
        compress(inputs.stimulus, hp.n_s_star),
    );
    let x_bands: Vec<Var> = (0..hp.frequencies())
        .map(|f| smooth_band(tape, mv, f, state.x_bands[f], c))
        .collect();
    let xn: Vec<Var> = x_bands.iter().map(|&b| normalize_band(tape, b)).collect();

    // Path integration from the previous inferred grid code.
    let g_path = grid_transition(tape, hp, mv, state.g, &inputs.action.one_hot());
    let s_path = sigma_path(tape, hp, mv, state.g);
    let g_gen_prior = if hp.shiny {
        grid_transition_generative(tape, hp, mv, state.g)
    } else {
        g_path
    };

    // Sensory-cued retrieval and its grid readout.
    let x_tilde = sensory_broadcast(tape, hp, mv, &xn);
    let p_x = attract(tape, state.mem_star, x_tilde, att, None)?;
    let recon_logits = decode(tape, hp, mv, p_x);
    let recon = tape.softmax_cross_entropy(recon_logits, inputs.stimulus);
    let readout = mem_to_grid(tape, hp, mv, p_x, recon);

    // Fuse the grid estimates.
    let mut terms = vec![(g_path, s_path), (readout.g_mem, readout.sigma)];
    if hp.shiny && inputs.shiny_here {
        let sp = tape.softplus(mv.shiny_sigma_raw);
        let s_shiny = tape.add_const(sp, hp.sigma_floor);
        terms.push((mv.shiny_mean, s_shiny));
    }
    let g_inf = combine_precision(tape, &terms);
    let p_inf = conjunction(tape, hp, mv, g_inf, &xn);

    // Generated place code: the previous step already retrieved it when it
    // predicted this stimulus, except right after a boundary.
    let p_hat = match state.p_hat_next {
        Some(v) => v,
        None => {
            let drive = grid_drive(tape, hp, g_gen_prior);
            attract(tape, state.mem, drive, att, Some(&place_mask))?
        }
    };

    // Retrieval from the pre-step memory cued by the inferred grid code.
    let gpred_drive = grid_drive(tape, hp, g_inf);
    let p_gpred = attract(tape, state.mem, gpred_drive, att, Some(&place_mask))?;
    let gpred_logits = decode(tape, hp, mv, p_gpred);

    // Store into both memories.
    let mem = store(
        tape,
        state.mem,
        p_inf,
        p_hat,
        hp.lambda,
        hp.eta,
        &place_mask,
    );
    let mem_star = store_inference(tape, state.mem_star, p_inf, p_x, hp.lambda, hp.eta);

    // Predict the next stimulus from the post-store memory.
    let g_next = if hp.shiny {
        grid_transition_generative(tape, hp, mv, g_inf)
    } else {
        grid_transition(tape, hp, mv, g_inf, &inputs.next_action.one_hot())
    };
    let next_drive = grid_drive(tape, hp, g_next);
    let p_hat_next = attract(tape, mem, next_drive, att, Some(&place_mask))?;
    let logits_next = decode(tape, hp, mv, p_hat_next);

    // Losses.
    let logits_now = decode(tape, hp, mv, p_inf);
    let ce_now = tape.softmax_cross_entropy(logits_now, inputs.stimulus);
    let l_x = masked(tape, ce_now, inputs.train_here);
    let ce_next = tape.softmax_cross_entropy(logits_next, inputs.next_stimulus);
    let l_next = masked(tape, ce_next, inputs.train_next);
    let ce_gpred = tape.softmax_cross_entropy(gpred_logits, inputs.stimulus);
    let l_gpred = masked(tape, ce_gpred, inputs.train_here);
    let l_p = tape.squared_error(p_inf, p_hat);
    let l_g = tape.squared_error(g_inf, g_gen_prior);
    let l_mem = tape.squared_error(p_inf, p_x);
    let l_reg = tape.dot(g_inf, g_inf);

    Ok(StepOutput {
        state: StepState {
            g: g_inf,
            x_bands,
            mem,
            mem_star,
            p_hat_next: Some(p_hat_next),
        },
        losses: LossVars {
            l_x,
            l_next,
            l_gpred,
            l_p,
            l_g,
            l_mem,
            l_reg,
        },
        g_inf,
        p_inf,
        logits_now,
        logits_next,
    })
}
