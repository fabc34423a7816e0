//! Fast Hebbian memory: one-shot storage of place codes into a weight matrix
//! and iterative attractor retrieval from a partial cue.
//!
//! Two matrices are maintained during training and evaluation. The generative
//! matrix is constrained by a hierarchical connectivity mask so that units of
//! a frequency band receive recurrent input only from the same or lower
//! frequency bands; the inference matrix is unconstrained. Both use the same
//! storage rule `M' = lambda * M + eta * (p - p_hat)(p + p_hat)^T`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{SuffixMask, Tape, TapeError, Var};

/// Settings for iterative attractor retrieval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorConfig {
    /// Decay on the running state, `0 < kappa <= 1`.
    pub kappa: f64,
    /// Number of iterations, at least 1.
    pub iters: usize,
    /// Negative-side slope of the leaky-relu nonlinearity.
    pub slope: f64,
}

impl Default for AttractorConfig {
    fn default() -> Self {
        AttractorConfig {
            kappa: 0.5,
            iters: 15,
            slope: 0.01,
        }
    }
}

/// Connectivity mask for a vector laid out as contiguous frequency bands of
/// the given sizes, highest frequency first. Entry (row, col) is allowed iff
/// the source band of `col` is the same as or lower frequency than the target
/// band of `row`, so each band receives no input from higher-frequency bands.
/// Allowed columns of any row form a suffix, hence the [`SuffixMask`] encoding.
pub fn hierarchy_mask(dims: &[usize]) -> SuffixMask {
    let total: usize = dims.iter().sum();
    let mut col_start = Vec::with_capacity(total);
    let mut offset = 0;
    for &d in dims {
        col_start.extend(std::iter::repeat(offset).take(d));
        offset += d;
    }
    SuffixMask::new(col_start, total)
}

/// One storage event on the generative matrix: decay plus a cross-term outer
/// product of the inferred and generated place codes, with the connectivity
/// mask re-applied so masked entries stay exactly zero.
pub fn store(
    tape: &mut Tape,
    mem: Var,
    p_inferred: Var,
    p_generated: Var,
    lambda: f64,
    eta: f64,
    mask: &SuffixMask,
) -> Var {
    tape.hebbian_store(mem, p_inferred, p_generated, lambda, eta, Some(mask))
}

/// One storage event on the inference matrix (no connectivity restriction).
/// `p_retrieved` is the code previously retrieved from this matrix.
pub fn store_inference(
    tape: &mut Tape,
    mem: Var,
    p_inferred: Var,
    p_retrieved: Var,
    lambda: f64,
    eta: f64,
) -> Var {
    tape.hebbian_store(mem, p_inferred, p_retrieved, lambda, eta, None)
}

/// Iterative retrieval `h <- clamp(leaky_relu(kappa * h + M h))` starting
/// from the drive `h0`, run for `cfg.iters` steps. Pass the connectivity
/// mask of the generative matrix to skip its structurally zero prefixes.
///
/// The per-iteration threshold at plus or minus 1 (the same bound the grid
/// transition uses) keeps retrieval finite when the fast weights grow large;
/// without it the store-retrieve loop can overflow within a few steps once
/// the matrix gain exceeds the leak. Well-formed retrievals sit inside the
/// bound, where the clamp is the identity.
///
/// Errors with [`TapeError::NonFinite`] if any iterate overflows, which
/// signals runaway weights rather than a recoverable condition.
pub fn attract(
    tape: &mut Tape,
    mem: Var,
    h0: Var,
    cfg: &AttractorConfig,
    mask: Option<&SuffixMask>,
) -> Result<Var, TapeError> {
    assert!(cfg.iters >= 1, "attractor needs at least one iteration");
    assert!(
        cfg.kappa > 0.0 && cfg.kappa <= 1.0,
        "attractor decay out of range: {}",
        cfg.kappa
    );
    let mut h = h0;
    for _ in 0..cfg.iters {
        let rec = match mask {
            Some(m) => tape.matvec_masked(mem, h, m),
            None => tape.matvec(mem, h),
        };
        let decayed = tape.scale(h, cfg.kappa);
        let pre = tape.add(decayed, rec);
        let active = tape.leaky_relu(pre, cfg.slope);
        if !tape.all_finite(active) {
            return Err(TapeError::NonFinite {
                op: "attract",
                node: active.id,
            });
        }
        h = tape.clamp_pm1(active);
    }
    Ok(h)
}

/// Plain-value snapshot of both memory matrices, carried across tapes between
/// steps and serialised inside checkpoints. `dim` is the place-code length.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MemoryState {
    pub dim: usize,
    /// Generative matrix, row-major `dim * dim`, mask already applied.
    pub m: Vec<f64>,
    /// Inference matrix, row-major `dim * dim`, unmasked.
    pub m_star: Vec<f64>,
}

impl MemoryState {
    pub fn new(dim: usize) -> Self {
        MemoryState {
            dim,
            m: vec![0.0; dim * dim],
            m_star: vec![0.0; dim * dim],
        }
    }

    /// Clear both matrices, as happens on every environment switch.
    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.m_star.fill(0.0);
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().chain(self.m_star.iter()).all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Shape;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    const PLACE_DIMS: [usize; 5] = [100, 100, 80, 60, 60];

    fn place_mask() -> SuffixMask {
        hierarchy_mask(&PLACE_DIMS)
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }

    /// Random nonnegative pattern with `active` nonzero entries, unit norm.
    fn sparse_pattern(rng: &mut StdRng, dim: usize, active: usize) -> Vec<f64> {
        let mut p = vec![0.0; dim];
        let idx = rand::seq::index::sample(rng, dim, active);
        for i in idx {
            p[i] = rng.random_range(0.5..1.5);
        }
        let norm: f64 = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        for v in &mut p {
            *v /= norm;
        }
        p
    }

    #[test]
    fn hierarchy_mask_layout_and_counts() {
        let grid = hierarchy_mask(&[20, 20, 16, 12, 12]);
        let allowed: usize = (0..80)
            .map(|r| 80 - grid.col_start[r])
            .sum();
        assert_eq!(allowed, 3872);

        let place = place_mask();
        let allowed: usize = (0..400).map(|r| 400 - place.col_start[r]).sum();
        assert_eq!(allowed, 96_800);

        // row in band f may read from columns at or past the band offset
        assert!(place.allows(0, 0) && place.allows(0, 399));
        assert!(!place.allows(100, 99) && place.allows(100, 100));
        assert!(!place.allows(399, 339) && place.allows(399, 340));
    }

    #[test]
    fn store_with_equal_codes_is_pure_decay() {
        let mut t = Tape::new();
        let mask = SuffixMask::new(vec![0, 1, 2, 0], 4);
        let vals: Vec<f64> = (0..16).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut masked_vals = vals.clone();
        for r in 0..4 {
            for c in 0..mask.col_start[r] {
                masked_vals[r * 4 + c] = 0.0;
            }
        }
        let m0 = t.constant(Shape::Matrix(4, 4), masked_vals.clone());
        let p = t.constant(Shape::Vector(4), vec![0.3, -0.4, 0.9, 0.1]);
        let m1 = store(&mut t, m0, p, p, 0.9999, 0.5, &mask);
        for (got, want) in t.value(m1).iter().zip(&masked_vals) {
            assert!((got - want * 0.9999).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_law_holds_over_hundred_stores() {
        let dim = 4;
        let lambda = 0.9999;
        let mask = SuffixMask::new(vec![0; dim], dim);
        let init: Vec<f64> = (0..16).map(|i| 1.0 - 0.07 * i as f64).collect();
        let mut mem = init.clone();
        for _ in 0..100 {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem);
            let p = t.constant(Shape::Vector(dim), vec![0.5, 0.25, -0.75, 1.0]);
            let next = store(&mut t, m, p, p, lambda, 0.5, &mask);
            mem = t.value(next).to_vec();
        }
        let scale = lambda.powi(100);
        for (got, want) in mem.iter().zip(&init) {
            assert!((got - want * scale).abs() < 1e-12, "{got} vs {}", want * scale);
        }
    }

    #[test]
    fn single_store_with_zero_generated_matches_outer_product() {
        let mut rng = StdRng::seed_from_u64(11);
        let dim = 400;
        let p = sparse_pattern(&mut rng, dim, 40);
        let mask = place_mask();

        let mut t = Tape::new();
        let m0 = t.constant(Shape::Matrix(dim, dim), vec![0.0; dim * dim]);
        let pv = t.constant(Shape::Vector(dim), p.clone());
        let zero = t.constant(Shape::Vector(dim), vec![0.0; dim]);
        let m1 = store(&mut t, m0, pv, zero, 0.9999, 0.5, &mask);
        let got = t.value(m1);

        for r in 0..dim {
            for c in 0..dim {
                let want = if mask.allows(r, c) { 0.5 * p[r] * p[c] } else { 0.0 };
                assert!((got[r * dim + c] - want).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn inference_store_is_unmasked() {
        let mut rng = StdRng::seed_from_u64(12);
        let dim = 400;
        let p = sparse_pattern(&mut rng, dim, dim); // fully dense pattern
        let mut t = Tape::new();
        let m0 = t.constant(Shape::Matrix(dim, dim), vec![0.0; dim * dim]);
        let pv = t.constant(Shape::Vector(dim), p.clone());
        let zero = t.constant(Shape::Vector(dim), vec![0.0; dim]);
        let m1 = store_inference(&mut t, m0, pv, zero, 0.9999, 0.5);
        let got = t.value(m1);
        assert!(got.iter().all(|&v| v != 0.0), "every entry may be nonzero");
        for r in 0..dim {
            for c in 0..dim {
                assert!((got[r * dim + c] - 0.5 * p[r] * p[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mask_preserved_across_store_sequence() {
        let mut rng = StdRng::seed_from_u64(13);
        let dim = 400;
        let mask = place_mask();
        let mut mem = vec![0.0; dim * dim];
        for _ in 0..5 {
            let p = sparse_pattern(&mut rng, dim, 40);
            let q = sparse_pattern(&mut rng, dim, 40);
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem);
            let pv = t.constant(Shape::Vector(dim), p);
            let qv = t.constant(Shape::Vector(dim), q);
            let next = store(&mut t, m, pv, qv, 0.9999, 0.5, &mask);
            mem = t.value(next).to_vec();
        }
        for r in 0..dim {
            for c in 0..mask.col_start[r] {
                assert_eq!(mem[r * dim + c], 0.0);
            }
        }
        assert!(mem.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn attractor_with_zero_memory_and_unit_decay_fixes_nonnegative_input() {
        let mut t = Tape::new();
        let dim = 8;
        let m = t.constant(Shape::Matrix(dim, dim), vec![0.0; dim * dim]);
        let h0: Vec<f64> = (0..dim).map(|i| i as f64 * 0.125).collect();
        let h0v = t.constant(Shape::Vector(dim), h0.clone());
        let cfg = AttractorConfig {
            kappa: 1.0,
            ..AttractorConfig::default()
        };
        let out = attract(&mut t, m, h0v, &cfg, None).unwrap();
        assert_eq!(t.value(out), &h0[..]);
    }

    #[test]
    fn attractor_saturates_activity_above_one() {
        let mut t = Tape::new();
        let dim = 4;
        let m = t.constant(Shape::Matrix(dim, dim), vec![0.0; dim * dim]);
        let h0v = t.constant(Shape::Vector(dim), vec![0.5, 1.0, 3.0, 50.0]);
        let cfg = AttractorConfig {
            kappa: 1.0,
            ..AttractorConfig::default()
        };
        let out = attract(&mut t, m, h0v, &cfg, None).unwrap();
        assert_eq!(t.value(out), &[0.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn single_pattern_retrieval_from_half_cue() {
        let mut rng = StdRng::seed_from_u64(17);
        let dim = 400;
        let p = sparse_pattern(&mut rng, dim, 40);

        let mut t = Tape::new();
        let m0 = t.constant(Shape::Matrix(dim, dim), vec![0.0; dim * dim]);
        let pv = t.constant(Shape::Vector(dim), p.clone());
        let zero = t.constant(Shape::Vector(dim), vec![0.0; dim]);
        let m1 = store_inference(&mut t, m0, pv, zero, 0.9999, 0.5);
        let cue = t.scale(pv, 0.5);
        let out = attract(&mut t, m1, cue, &AttractorConfig::default(), None).unwrap();
        assert!(cosine(t.value(out), &p) >= 0.9);
    }

    /// Retrieval interference scales with the memory's eigenvalues, which go
    /// as the squared pattern norm, while the attractor's decay term does not.
    /// Stored codes therefore have to sit in the weak-storage regime: at unit
    /// norm the 15-step iteration amplifies the shared all-positive direction
    /// of the stored set until every cue retrieves the same mixture (cosine
    /// ~0.35), while at norm 0.2 all twenty patterns come back cleanly. The
    /// learned place codes are free to find that scale; this test pins the
    /// regime where capacity holds.
    #[test]
    fn capacity_twenty_sparse_patterns() {
        let mut rng = StdRng::seed_from_u64(23);
        let dim = 400;
        let k = 20;
        let scale = 0.2;
        let patterns: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let mut p = sparse_pattern(&mut rng, dim, 40);
                for v in &mut p {
                    *v *= scale;
                }
                p
            })
            .collect();
        let mask = place_mask();

        let mut mem = vec![0.0; dim * dim];
        let mut mem_star = vec![0.0; dim * dim];
        for p in &patterns {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem);
            let ms = t.constant(Shape::Matrix(dim, dim), mem_star);
            let pv = t.constant(Shape::Vector(dim), p.clone());
            let zero = t.constant(Shape::Vector(dim), vec![0.0; dim]);
            let nm = store(&mut t, m, pv, zero, 0.9999, 0.5, &mask);
            let ns = store_inference(&mut t, ms, pv, zero, 0.9999, 0.5);
            mem = t.value(nm).to_vec();
            mem_star = t.value(ns).to_vec();
        }

        for p in &patterns {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem.clone());
            let ms = t.constant(Shape::Matrix(dim, dim), mem_star.clone());
            let pv = t.constant(Shape::Vector(dim), p.clone());
            let cue = t.scale(pv, 0.5);
            let cfg = AttractorConfig::default();
            let om = attract(&mut t, m, cue, &cfg, Some(&mask)).unwrap();
            let os = attract(&mut t, ms, cue, &cfg, None).unwrap();
            let cm = cosine(t.value(om), p);
            let cs = cosine(t.value(os), p);
            assert!(cm >= 0.8, "masked retrieval cosine {cm}");
            assert!(cs >= 0.8, "unmasked retrieval cosine {cs}");
        }
    }

    #[test]
    fn retrieval_fails_after_reset() {
        let mut rng = StdRng::seed_from_u64(29);
        let dim = 400;
        let active = 40;
        // uniform-magnitude pattern so a single-entry cue has cosine
        // 1/sqrt(active) ~= 0.16 with the whole pattern
        let mut p = vec![0.0; dim];
        let idx: Vec<usize> = rand::seq::index::sample(&mut rng, dim, active).into_vec();
        for &i in &idx {
            p[i] = 1.0 / (active as f64).sqrt();
        }
        let mut cue = vec![0.0; dim];
        cue[idx[0]] = 0.5 * p[idx[0]];

        let mut state = MemoryState::new(dim);
        {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), state.m_star.clone());
            let pv = t.constant(Shape::Vector(dim), p.clone());
            let zero = t.constant(Shape::Vector(dim), vec![0.0; dim]);
            let next = store_inference(&mut t, m, pv, zero, 0.9999, 0.5);
            state.m_star = t.value(next).to_vec();
        }

        let retrieve = |mem: &[f64]| {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem.to_vec());
            let c = t.constant(Shape::Vector(dim), cue.clone());
            let out = attract(&mut t, m, c, &AttractorConfig::default(), None).unwrap();
            cosine(t.value(out), &p)
        };

        assert!(retrieve(&state.m_star) >= 0.9, "pre-reset retrieval");
        state.reset();
        assert!(state.is_zero());
        assert!(retrieve(&state.m_star) < 0.2, "post-reset retrieval");
    }

    #[test]
    fn high_frequency_cue_never_reaches_lower_bands() {
        let mut rng = StdRng::seed_from_u64(31);
        let dim = 400;
        let mask = place_mask();
        let mut mem = vec![0.0; dim * dim];
        for r in 0..dim {
            for c in mask.col_start[r]..dim {
                mem[r * dim + c] = rng.random_range(0.0..0.01);
            }
        }

        let run = |cue: Vec<f64>, mem: &[f64]| {
            let mut t = Tape::new();
            let m = t.constant(Shape::Matrix(dim, dim), mem.to_vec());
            let h0 = t.constant(Shape::Vector(dim), cue);
            let out = attract(&mut t, m, h0, &AttractorConfig::default(), Some(&mask)).unwrap();
            t.value(out).to_vec()
        };

        // cue only the highest-frequency band: lower bands get no input at all
        let mut cue = vec![0.0; dim];
        for v in cue.iter_mut().take(100) {
            *v = 0.3;
        }
        let out = run(cue, &mem);
        assert!(out[..100].iter().any(|&v| v != 0.0));
        assert!(out[100..].iter().all(|&v| v == 0.0));

        // cue only the lowest-frequency band: every band may light up
        let mut cue = vec![0.0; dim];
        for v in cue.iter_mut().skip(340) {
            *v = 0.3;
        }
        let out = run(cue, &mem);
        assert!(out[..100].iter().any(|&v| v != 0.0));
        assert!(out[340..].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn attractor_reports_runaway_weights() {
        let mut t = Tape::new();
        let dim = 4;
        let m = t.constant(Shape::Matrix(dim, dim), vec![1e200; dim * dim]);
        let h0 = t.constant(Shape::Vector(dim), vec![1e200; dim]);
        let cfg = AttractorConfig::default();
        match attract(&mut t, m, h0, &cfg, None) {
            Err(TapeError::NonFinite { op, .. }) => assert_eq!(op, "attract"),
            Err(other) => panic!("unexpected error {other:?}"),
            Ok(_) => panic!("expected non-finite error"),
        }
    }

    #[test]
    fn attractor_gradient_reaches_memory_and_cue() {
        use crate::autodiff::gradcheck;

        let dim = 3;
        let mem: Vec<f64> = vec![0.05, -0.02, 0.04, 0.0, 0.03, -0.01, 0.02, 0.0, 0.06];
        let cue: Vec<f64> = vec![0.4, -0.3, 0.8];
        let cfg = AttractorConfig {
            kappa: 0.5,
            iters: 3,
            slope: 0.01,
        };
        let w: Vec<f64> = vec![0.7, -0.2, 0.9];

        let build = |t: &mut Tape, m: Var| {
            let h0 = t.constant(Shape::Vector(dim), cue.clone());
            let out = attract(t, m, h0, &cfg, None).unwrap();
            let wv = t.constant(Shape::Vector(dim), w.clone());
            t.dot(out, wv)
        };
        let err = gradcheck::check(&mem, Shape::Matrix(dim, dim), build, 1e-5);
        assert!(err < 1e-4, "attractor gradient error {err}");
    }
}
