//! Model dimensions, learnable parameters, and their tape bindings.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Shape, SuffixMask, Tape, Var};
use crate::hebbmem::{hierarchy_mask, AttractorConfig};

/// Fixed architectural choices. Defaults reproduce the reference setup;
/// tests shrink the dimensions for speed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of sensory identities.
    pub n_s: usize,
    /// Compressed sensory dimension.
    pub n_s_star: usize,
    /// Phases per frequency band, highest frequency first.
    pub n_phase: Vec<usize>,
    /// Negative-side slope shared by all leaky-relu activations.
    pub slope: f64,
    pub attractor: AttractorConfig,
    /// Additive floor under every predicted standard deviation.
    pub sigma_floor: f64,
    /// Memory forgetting rate.
    pub lambda: f64,
    /// Memory remembering rate.
    pub eta: f64,
    /// Enable the reward-indicator term in grid inference and switch the
    /// generative transition to the actionless head.
    pub shiny: bool,
    pub transition_hidden: usize,
    pub decoder_hidden: usize,
    pub mem_hidden: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            n_s: 45,
            n_s_star: 10,
            n_phase: vec![10, 10, 8, 6, 6],
            slope: 0.01,
            attractor: AttractorConfig::default(),
            sigma_floor: 1e-3,
            lambda: 0.9999,
            eta: 0.5,
            shiny: false,
            transition_hidden: 20,
            decoder_hidden: 20,
            mem_hidden: 20,
        }
    }
}

impl Hyperparams {
    pub fn frequencies(&self) -> usize {
        self.n_phase.len()
    }

    /// Grid cells per band: twice the phase count, of which the drive
    /// function reads the first `n_phase` cells.
    pub fn n_grid(&self) -> Vec<usize> {
        self.n_phase.iter().map(|&n| 2 * n).collect()
    }

    pub fn n_place(&self) -> Vec<usize> {
        self.n_phase.iter().map(|&n| n * self.n_s_star).collect()
    }

    pub fn grid_total(&self) -> usize {
        self.n_grid().iter().sum()
    }

    pub fn place_total(&self) -> usize {
        self.n_place().iter().sum()
    }

    pub fn grid_offsets(&self) -> Vec<usize> {
        offsets(&self.n_grid())
    }

    pub fn place_offsets(&self) -> Vec<usize> {
        offsets(&self.n_place())
    }

    pub fn grid_mask(&self) -> SuffixMask {
        hierarchy_mask(&self.n_grid())
    }

    pub fn place_mask(&self) -> SuffixMask {
        hierarchy_mask(&self.n_place())
    }

    /// Packed length of the allowed transition-matrix entries.
    pub fn transition_entries(&self) -> usize {
        let mask = self.grid_mask();
        let total = self.grid_total();
        (0..total).map(|r| total - mask.col_start[r]).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.n_phase.is_empty() {
            return Err("need at least one frequency band".into());
        }
        let max_ids = self.n_s_star * (self.n_s_star - 1) / 2;
        if self.n_s > max_ids {
            return Err(format!(
                "{} sensory identities exceed the {} distinct two-hot codes of dimension {}",
                self.n_s, max_ids, self.n_s_star
            ));
        }
        if self.n_s == 0 {
            return Err("need at least one sensory identity".into());
        }
        if !(0.0 < self.slope && self.slope < 1.0) {
            return Err(format!("leaky slope out of range: {}", self.slope));
        }
        if self.n_phase.iter().any(|&n| n == 0) {
            return Err("every band needs at least one phase".into());
        }
        if !(0.0 < self.attractor.kappa && self.attractor.kappa <= 1.0) {
            return Err(format!("attractor kappa out of range: {}", self.attractor.kappa));
        }
        if self.attractor.iters == 0 {
            return Err("attractor needs at least one iteration".into());
        }
        if !(0.0 < self.lambda && self.lambda <= 1.0) {
            return Err(format!("memory decay lambda out of range: {}", self.lambda));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(format!("memory write rate eta out of range: {}", self.eta));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(format!("sigma floor must be positive: {}", self.sigma_floor));
        }
        if self.transition_hidden == 0 || self.decoder_hidden == 0 || self.mem_hidden == 0 {
            return Err("hidden widths must be at least 1".into());
        }
        Ok(())
    }
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out
}

/// One-hidden-layer perceptron with tanh nonlinearity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Mlp {
    pub d_in: usize,
    pub d_hidden: usize,
    pub d_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Mlp {
    /// Hidden layer scaled by fan-in; output layer zeroed when `zero_out` so
    /// the net starts as the constant-zero function but keeps gradients.
    pub fn init(rng: &mut StdRng, d_in: usize, d_hidden: usize, d_out: usize, zero_out: bool) -> Self {
        let lim1 = 1.0 / (d_in as f64).sqrt();
        let lim2 = 1.0 / (d_hidden as f64).sqrt();
        let w1 = (0..d_hidden * d_in)
            .map(|_| rng.random_range(-lim1..lim1))
            .collect();
        let w2 = if zero_out {
            vec![0.0; d_out * d_hidden]
        } else {
            (0..d_out * d_hidden)
                .map(|_| rng.random_range(-lim2..lim2))
                .collect()
        };
        Mlp {
            d_in,
            d_hidden,
            d_out,
            w1,
            b1: vec![0.0; d_hidden],
            w2,
            b2: vec![0.0; d_out],
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.param(Shape::Matrix(self.d_hidden, self.d_in), self.w1.clone()),
            b1: tape.param(Shape::Vector(self.d_hidden), self.b1.clone()),
            w2: tape.param(Shape::Matrix(self.d_out, self.d_hidden), self.w2.clone()),
            b2: tape.param(Shape::Vector(self.d_out), self.b2.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = tape.matvec(self.w1, x);
        let h = tape.add(h, self.b1);
        let h = tape.tanh(h);
        let y = tape.matvec(self.w2, h);
        tape.add(y, self.b2)
    }
}

/// Every learnable tensor in the model, stored as plain values. Bound onto a
/// fresh tape once per window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelParams {
    pub hp: Hyperparams,
    /// Action embedding to packed transition-matrix entries.
    pub f_d: Mlp,
    /// Actionless transition entries for the generative head in the
    /// reward-indicator configuration.
    pub d_gen: Vec<f64>,
    /// Grid-state to path-integration log-variances.
    pub f_sigma_g: Mlp,
    /// Conjunction gain per frequency; small start keeps early memories in
    /// the weak-storage regime the attractor retrieves cleanly from.
    pub w_p: Vec<f64>,
    /// Decoder gain per frequency (only the highest frequency is read).
    pub w_x: Vec<f64>,
    /// Decoder bias in compressed-sensory space.
    pub b_x: Vec<f64>,
    /// Decompression net from compressed space to identity logits.
    pub f_c_star: Mlp,
    /// Per-frequency readout from retrieved place codes to grid means.
    pub mem_nets: Vec<Mlp>,
    /// Affine-softplus confidence map for memory-derived grid estimates:
    /// inputs are retrieved-code length and reconstruction error.
    pub sigma_mem_w: Vec<f64>,
    pub sigma_mem_b: Vec<f64>,
    /// Smoothing constants, stored as logits.
    pub alpha_logits: Vec<f64>,
    /// Learnable grid state used at environment entry.
    pub g_init: Vec<f64>,
    /// Reward-indicator grid embedding and its raw widths.
    pub shiny_mean: Vec<f64>,
    pub shiny_sigma_raw: Vec<f64>,
    /// Generative place variance head; unused on the deterministic path.
    pub f_sigma_p: Mlp,
}

impl ModelParams {
    pub fn init(hp: Hyperparams, seed: u64) -> Self {
        hp.validate().expect("invalid hyperparameters");
        let mut rng = StdRng::seed_from_u64(seed);
        let f = hp.frequencies();
        let gt = hp.grid_total();
        let pt = hp.place_total();
        let n_grid = hp.n_grid();
        let n_place = hp.n_place();

        let f_d = Mlp::init(
            &mut rng,
            crate::worldgen::N_ACTIONS,
            hp.transition_hidden,
            hp.transition_entries(),
            true,
        );
        let f_sigma_g = Mlp::init(&mut rng, gt, hp.transition_hidden, gt, true);
        let f_c_star = Mlp::init(&mut rng, hp.n_s_star, hp.decoder_hidden, hp.n_s, true);
        let mem_nets = (0..f)
            .map(|i| Mlp::init(&mut rng, n_place[i], hp.mem_hidden, n_grid[i], true))
            .collect();
        let f_sigma_p = Mlp::init(&mut rng, pt, 8, pt, true);

        // smoothing spread imposes the temporal hierarchy, fast to slow
        let alpha_init = [0.9, 0.7, 0.5, 0.3, 0.1];
        let alpha_logits = (0..f)
            .map(|i| {
                let a: f64 = alpha_init[i.min(alpha_init.len() - 1)];
                (a / (1.0 - a)).ln()
            })
            .collect();

        ModelParams {
            f_d,
            d_gen: vec![0.0; hp.transition_entries()],
            f_sigma_g,
            w_p: vec![0.25; f],
            w_x: vec![1.0; f],
            b_x: vec![0.0; hp.n_s_star],
            f_c_star,
            mem_nets,
            // confident only when the readout is long and reconstructs well
            sigma_mem_w: vec![-5.0, 1.0],
            sigma_mem_b: vec![0.0],
            alpha_logits,
            g_init: (0..gt).map(|_| rng.random_range(-0.5..0.5)).collect(),
            shiny_mean: vec![0.0; gt],
            shiny_sigma_raw: vec![2.0; gt],
            f_sigma_p,
            hp,
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            f_d: self.f_d.bind(tape),
            d_gen: tape.param(
                Shape::Vector(self.d_gen.len()),
                self.d_gen.clone(),
            ),
            f_sigma_g: self.f_sigma_g.bind(tape),
            w_p: tape.param(Shape::Vector(self.w_p.len()), self.w_p.clone()),
            w_x: tape.param(Shape::Vector(self.w_x.len()), self.w_x.clone()),
            b_x: tape.param(Shape::Vector(self.b_x.len()), self.b_x.clone()),
            f_c_star: self.f_c_star.bind(tape),
            mem_nets: self.mem_nets.iter().map(|m| m.bind(tape)).collect(),
            sigma_mem_w: tape.param(Shape::Vector(2), self.sigma_mem_w.clone()),
            sigma_mem_b: tape.param(Shape::Vector(1), self.sigma_mem_b.clone()),
            alpha_logits: tape.param(
                Shape::Vector(self.alpha_logits.len()),
                self.alpha_logits.clone(),
            ),
            g_init: tape.param(Shape::Vector(self.g_init.len()), self.g_init.clone()),
            shiny_mean: tape.param(
                Shape::Vector(self.shiny_mean.len()),
                self.shiny_mean.clone(),
            ),
            shiny_sigma_raw: tape.param(
                Shape::Vector(self.shiny_sigma_raw.len()),
                self.shiny_sigma_raw.clone(),
            ),
            f_sigma_p: self.f_sigma_p.bind(tape),
        }
    }

    /// Visit every tensor in a stable order shared with [`ModelVars::leaves`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Vec<f64>)) {
        f("f_d.w1", &mut self.f_d.w1);
        f("f_d.b1", &mut self.f_d.b1);
        f("f_d.w2", &mut self.f_d.w2);
        f("f_d.b2", &mut self.f_d.b2);
        f("d_gen", &mut self.d_gen);
        f("f_sigma_g.w1", &mut self.f_sigma_g.w1);
        f("f_sigma_g.b1", &mut self.f_sigma_g.b1);
        f("f_sigma_g.w2", &mut self.f_sigma_g.w2);
        f("f_sigma_g.b2", &mut self.f_sigma_g.b2);
        f("w_p", &mut self.w_p);
        f("w_x", &mut self.w_x);
        f("b_x", &mut self.b_x);
        f("f_c_star.w1", &mut self.f_c_star.w1);
        f("f_c_star.b1", &mut self.f_c_star.b1);
        f("f_c_star.w2", &mut self.f_c_star.w2);
        f("f_c_star.b2", &mut self.f_c_star.b2);
        for (i, m) in self.mem_nets.iter_mut().enumerate() {
            f(&format!("mem_nets[{i}].w1"), &mut m.w1);
            f(&format!("mem_nets[{i}].b1"), &mut m.b1);
            f(&format!("mem_nets[{i}].w2"), &mut m.w2);
            f(&format!("mem_nets[{i}].b2"), &mut m.b2);
        }
        f("sigma_mem_w", &mut self.sigma_mem_w);
        f("sigma_mem_b", &mut self.sigma_mem_b);
        f("alpha_logits", &mut self.alpha_logits);
        f("g_init", &mut self.g_init);
        f("shiny_mean", &mut self.shiny_mean);
        f("shiny_sigma_raw", &mut self.shiny_sigma_raw);
        f("f_sigma_p.w1", &mut self.f_sigma_p.w1);
        f("f_sigma_p.b1", &mut self.f_sigma_p.b1);
        f("f_sigma_p.w2", &mut self.f_sigma_p.w2);
        f("f_sigma_p.b2", &mut self.f_sigma_p.b2);
    }
}

/// Tape leaves for one window, in [`ModelParams::visit_mut`] order.
pub struct ModelVars {
    pub f_d: MlpVars,
    pub d_gen: Var,
    pub f_sigma_g: MlpVars,
    pub w_p: Var,
    pub w_x: Var,
    pub b_x: Var,
    pub f_c_star: MlpVars,
    pub mem_nets: Vec<MlpVars>,
    pub sigma_mem_w: Var,
    pub sigma_mem_b: Var,
    pub alpha_logits: Var,
    pub g_init: Var,
    pub shiny_mean: Var,
    pub shiny_sigma_raw: Var,
    pub f_sigma_p: MlpVars,
}

impl ModelVars {
    /// Leaf vars in the same order as [`ModelParams::visit_mut`].
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = vec![
            self.f_d.w1,
            self.f_d.b1,
            self.f_d.w2,
            self.f_d.b2,
            self.d_gen,
            self.f_sigma_g.w1,
            self.f_sigma_g.b1,
            self.f_sigma_g.w2,
            self.f_sigma_g.b2,
            self.w_p,
            self.w_x,
            self.b_x,
            self.f_c_star.w1,
            self.f_c_star.b1,
            self.f_c_star.w2,
            self.f_c_star.b2,
        ];
        for m in &self.mem_nets {
            out.extend([m.w1, m.b1, m.w2, m.b2]);
        }
        out.extend([
            self.sigma_mem_w,
            self.sigma_mem_b,
            self.alpha_logits,
            self.g_init,
            self.shiny_mean,
            self.shiny_sigma_raw,
            self.f_sigma_p.w1,
            self.f_sigma_p.b1,
            self.f_sigma_p.w2,
            self.f_sigma_p.b2,
        ]);
        out
    }
}
