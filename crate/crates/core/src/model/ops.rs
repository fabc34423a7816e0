//! Differentiable building blocks of the generative and inference networks.
//!
//! Vector layouts: grid states concatenate per-frequency bands (highest
//! frequency first); place codes concatenate bands laid out sensory-slot
//! outer, phase inner, so entry `(s, j)` of band `f` sits at `s * n_phase[f]
//! + j`.

use crate::autodiff::{Shape, Tape, Var};

use super::params::{Hyperparams, ModelVars};

/// Lexicographic two-element subset of `0..n_s_star` for a sensory identity.
pub fn stimulus_pair(id: usize, n_s_star: usize) -> (usize, usize) {
    assert!(id < n_s_star * (n_s_star - 1) / 2, "identity out of range");
    let mut id = id;
    for i in 0..n_s_star {
        let count = n_s_star - 1 - i;
        if id < count {
            return (i, i + 1 + id);
        }
        id -= count;
    }
    unreachable!()
}

/// Fixed two-hot compression of a sensory identity.
pub fn compress(id: usize, n_s_star: usize) -> Vec<f64> {
    let (a, b) = stimulus_pair(id, n_s_star);
    let mut c = vec![0.0; n_s_star];
    c[a] = 1.0;
    c[b] = 1.0;
    c
}

/// One exponential-smoothing step of band `f`:
/// `(1 - alpha_f) * prev + alpha_f * c` with `alpha_f` the sigmoid of a
/// learnable logit.
pub fn smooth_band(tape: &mut Tape, mv: &ModelVars, f: usize, prev: Var, c: Var) -> Var {
    let logit = tape.slice(mv.alpha_logits, f, 1);
    let alpha = tape.sigmoid(logit);
    let neg = tape.scale(alpha, -1.0);
    let one_minus = tape.add_const(neg, 1.0);
    let keep = tape.mul_scalar(prev, one_minus);
    let take = tape.mul_scalar(c, alpha);
    tape.add(keep, take)
}

/// Band normalisation: demean, relu, unit L2 norm (all-zero stays all-zero).
pub fn normalize_band(tape: &mut Tape, x: Var) -> Var {
    let d = tape.demean(x);
    let r = tape.relu(d);
    tape.l2_normalize(r)
}

fn transition_from_packed(
    tape: &mut Tape,
    hp: &Hyperparams,
    packed: Var,
    g_prev: Var,
) -> Var {
    let mask = hp.grid_mask();
    let d = tape.scatter_suffix(packed, &mask);
    let delta = tape.matvec_masked(d, g_prev, &mask);
    let sum = tape.add(g_prev, delta);
    tape.clamp_pm1(sum)
}

/// Action-conditioned grid transition: `clamp(g + D_a g)` where the allowed
/// entries of `D_a` come from the action net and blocks from higher to lower
/// frequencies are structurally zero.
pub fn grid_transition(
    tape: &mut Tape,
    hp: &Hyperparams,
    mv: &ModelVars,
    g_prev: Var,
    action_one_hot: &[f64],
) -> Var {
    let a = tape.constant(Shape::Vector(action_one_hot.len()), action_one_hot.to_vec());
    let packed = mv.f_d.forward(tape, a);
    transition_from_packed(tape, hp, packed, g_prev)
}

/// Actionless transition head used by the generative side of the
/// reward-indicator configuration.
pub fn grid_transition_generative(
    tape: &mut Tape,
    hp: &Hyperparams,
    mv: &ModelVars,
    g_prev: Var,
) -> Var {
    transition_from_packed(tape, hp, mv.d_gen, g_prev)
}

/// Path-integration widths from the previous grid state.
pub fn sigma_path(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, g_prev: Var) -> Var {
    let raw = mv.f_sigma_g.forward(tape, g_prev);
    let sp = tape.softplus(raw);
    tape.add_const(sp, hp.sigma_floor)
}

/// Attractor drive from a grid state: per band, the first `n_phase` cells,
/// unit-normalised, repeated across every sensory slot, with the repeat
/// scaled so each band of the drive keeps unit norm.
pub fn grid_drive(tape: &mut Tape, hp: &Hyperparams, g: Var) -> Var {
    let offs = hp.grid_offsets();
    let scale = 1.0 / (hp.n_s_star as f64).sqrt();
    let mut bands = Vec::with_capacity(hp.frequencies());
    for f in 0..hp.frequencies() {
        let sub = tape.slice(g, offs[f], hp.n_phase[f]);
        let n = tape.l2_normalize(sub);
        let tiled = tape.tile(n, hp.n_s_star);
        bands.push(tape.scale(tiled, scale));
    }
    tape.concat(&bands)
}

/// Sensory stream broadcast into place-code layout: per band, each slot's
/// normalised value repeated over that band's phases and scaled by the
/// conjunction gain. Doubles as the cue for sensory-driven retrieval.
pub fn sensory_broadcast(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, xn: &[Var]) -> Var {
    let mut bands = Vec::with_capacity(hp.frequencies());
    for f in 0..hp.frequencies() {
        let rep = tape.repeat_each(xn[f], hp.n_phase[f]);
        let gain = tape.slice(mv.w_p, f, 1);
        bands.push(tape.mul_scalar(rep, gain));
    }
    tape.concat(&bands)
}

/// Conjunctive place code: elementwise product of the broadcast grid and
/// sensory factors through the leaky relu.
pub fn conjunction(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, g: Var, xn: &[Var]) -> Var {
    let gt = grid_drive(tape, hp, g);
    let xt = sensory_broadcast(tape, hp, mv, xn);
    let prod = tape.mul(gt, xt);
    tape.leaky_relu(prod, hp.slope)
}

/// Identity logits from a place code. Only the highest-frequency band is
/// read: its phases are summed per sensory slot, scaled, biased, and
/// decompressed.
pub fn decode(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, p: Var) -> Var {
    let top = tape.slice(p, 0, hp.n_phase[0] * hp.n_s_star);
    let sums = tape.sum_chunks(top, hp.n_phase[0]);
    let gain = tape.slice(mv.w_x, 0, 1);
    let scaled = tape.mul_scalar(sums, gain);
    let pre = tape.add(scaled, mv.b_x);
    mv.f_c_star.forward(tape, pre)
}

/// Confidence width for one band of the memory readout, from the retrieved
/// code's length and the reconstruction error.
pub fn sigma_mem(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, len: Var, recon: Var) -> Var {
    let w0 = tape.slice(mv.sigma_mem_w, 0, 1);
    let w1 = tape.slice(mv.sigma_mem_w, 1, 1);
    let t0 = tape.mul_scalar(w0, len);
    let t1 = tape.mul_scalar(w1, recon);
    let s = tape.add(t0, t1);
    let pre = tape.add(s, mv.sigma_mem_b);
    let sp = tape.softplus(pre);
    tape.add_const(sp, hp.sigma_floor)
}

pub struct MemReadout {
    pub g_mem: Var,
    pub sigma: Var,
}

/// Grid estimate from a sensory-cued retrieval: per-band mean through the
/// readout nets, width shared within each band from [`sigma_mem`].
pub fn mem_to_grid(
    tape: &mut Tape,
    hp: &Hyperparams,
    mv: &ModelVars,
    p_x: Var,
    recon: Var,
) -> MemReadout {
    let offs = hp.place_offsets();
    let n_place = hp.n_place();
    let n_grid = hp.n_grid();
    let mut means = Vec::with_capacity(hp.frequencies());
    let mut sigmas = Vec::with_capacity(hp.frequencies());
    for f in 0..hp.frequencies() {
        let band = tape.slice(p_x, offs[f], n_place[f]);
        means.push(mv.mem_nets[f].forward(tape, band));
        let len = tape.l2_norm(band);
        let s = sigma_mem(tape, hp, mv, len, recon);
        sigmas.push(tape.tile(s, n_grid[f]));
    }
    MemReadout {
        g_mem: tape.concat(&means),
        sigma: tape.concat(&sigmas),
    }
}

/// Precision-weighted fusion of Gaussian estimates, clamped to the valid
/// grid range. `terms` are (mean, width) pairs with strictly positive widths.
pub fn combine_precision(tape: &mut Tape, terms: &[(Var, Var)]) -> Var {
    assert!(!terms.is_empty());
    let mut num: Option<Var> = None;
    let mut den: Option<Var> = None;
    for &(mean, sigma) in terms {
        let var = tape.mul(sigma, sigma);
        let prec = tape.recip(var);
        let contrib = tape.mul(mean, prec);
        num = Some(match num {
            Some(n) => tape.add(n, contrib),
            None => contrib,
        });
        den = Some(match den {
            Some(d) => tape.add(d, prec),
            None => prec,
        });
    }
    let inv = tape.recip(den.unwrap());
    let g = tape.mul(num.unwrap(), inv);
    tape.clamp_pm1(g)
}

/// Generative place widths as a function of the place mean. Kept for the
/// probabilistic formulation; the deterministic path never calls it.
pub fn sigma_place(tape: &mut Tape, hp: &Hyperparams, mv: &ModelVars, mu: Var) -> Var {
    let raw = mv.f_sigma_p.forward(tape, mu);
    let sp = tape.softplus(raw);
    tape.add_const(sp, hp.sigma_floor)
}
