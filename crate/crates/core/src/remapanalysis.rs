//! Cross-trial analysis of spatial rate maps: fits idealised grid patterns,
//! measures grid activity at place-field peaks (or peak-to-peak distances),
//! correlates the measures across trials, and calibrates significance with
//! shuffle nulls built from toroidal map shifts.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalmetrics::{autocorrelogram, grid_score, GridKind, RateMap};
use crate::stats;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("too few shared pairs: {found} < {needed}")]
    TooFewPairs { found: usize, needed: usize },
    #[error("peak-distance measure requires ideal grid fits")]
    MinDistNeedsFits,
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

/// Idealised grid pattern: a * sum of three plane-wave cosines at 60 degree
/// separation, wave number 4*pi/(sqrt(3)*scale), plus a baseline.
///
/// With that wave number the pattern's peak lattice has nearest-neighbour
/// spacing exactly `scale` (in bins).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdealGridFit {
    /// Peak spacing in bins. Always > 0.
    pub scale: f64,
    /// Lattice orientation in radians, canonical in [0, pi/3).
    pub theta: f64,
    /// Phase offset as [row, col]; one peak of the pattern sits here.
    pub x0: [f64; 2],
    pub amplitude: f64,
    pub baseline: f64,
    /// Pearson correlation between the fitted pattern and the map.
    pub r: f64,
    /// False when the best correlation stayed under 0.3 or the map was flat.
    pub reliable: bool,
}

/// Wave vectors in (x, y) = (col, row) coordinates.
fn wave_vectors(scale: f64, theta: f64) -> [[f64; 2]; 3] {
    let k = 4.0 * PI / (3f64.sqrt() * scale);
    let mut out = [[0.0; 2]; 3];
    for (i, kv) in out.iter_mut().enumerate() {
        let a = theta + i as f64 * PI / 3.0;
        *kv = [k * a.cos(), k * a.sin()];
    }
    out
}

/// Lattice basis dual to the first two wave vectors: k_i . v_j = 2*pi*delta_ij.
fn lattice_vectors(ks: &[[f64; 2]; 3]) -> ([f64; 2], [f64; 2]) {
    let (k0, k1) = (ks[0], ks[1]);
    let det = k0[0] * k1[1] - k0[1] * k1[0];
    let v1 = [2.0 * PI * k1[1] / det, -2.0 * PI * k1[0] / det];
    let v2 = [-2.0 * PI * k0[1] / det, 2.0 * PI * k0[0] / det];
    (v1, v2)
}

fn pattern_sum(ks: &[[f64; 2]; 3], x: f64, y: f64, x0: [f64; 2]) -> f64 {
    ks.iter()
        .map(|k| (k[0] * (x - x0[0]) + k[1] * (y - x0[1])).cos())
        .sum()
}

impl IdealGridFit {
    /// Pattern value at a [row, col] position (fractional positions allowed).
    pub fn eval(&self, pos: [f64; 2]) -> f64 {
        let ks = wave_vectors(self.scale, self.theta);
        let s = pattern_sum(&ks, pos[1], pos[0], [self.x0[1], self.x0[0]]);
        self.amplitude * s + self.baseline
    }
}

pub fn render_ideal_grid(fit: &IdealGridFit, width: usize) -> RateMap {
    let mut map = RateMap::new(width);
    for r in 0..width {
        for c in 0..width {
            map.set(r, c, fit.eval([r as f64, c as f64]));
        }
    }
    map
}

/// All pattern peaks inside the map extent, as [row, col] positions.
pub fn ideal_grid_peaks(fit: &IdealGridFit, width: usize) -> Vec<[f64; 2]> {
    let ks = wave_vectors(fit.scale, fit.theta);
    let (v1, v2) = lattice_vectors(&ks);
    let x0 = [fit.x0[1], fit.x0[0]];
    let det = v1[0] * v2[1] - v1[1] * v2[0];
    let coef = |p: [f64; 2]| {
        let q = [p[0] - x0[0], p[1] - x0[1]];
        (
            (q[0] * v2[1] - q[1] * v2[0]) / det,
            (v1[0] * q[1] - v1[1] * q[0]) / det,
        )
    };
    let hi = width as f64 - 0.5;
    let (mut m_lo, mut m_hi) = (f64::MAX, f64::MIN);
    let (mut n_lo, mut n_hi) = (f64::MAX, f64::MIN);
    for p in [[-0.5, -0.5], [hi, -0.5], [-0.5, hi], [hi, hi]] {
        let (m, n) = coef(p);
        m_lo = m_lo.min(m);
        m_hi = m_hi.max(m);
        n_lo = n_lo.min(n);
        n_hi = n_hi.max(n);
    }
    let mut out = Vec::new();
    for m in (m_lo.floor() as i64 - 1)..=(m_hi.ceil() as i64 + 1) {
        for n in (n_lo.floor() as i64 - 1)..=(n_hi.ceil() as i64 + 1) {
            let x = x0[0] + m as f64 * v1[0] + n as f64 * v2[0];
            let y = x0[1] + m as f64 * v1[1] + n as f64 * v2[1];
            if (-0.5..=hi).contains(&x) && (-0.5..=hi).contains(&y) {
                out.push([y, x]);
            }
        }
    }
    out
}

// ---- fitting ----------------------------------------------------------------

struct FitData {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Demeaned map values over valid bins.
    d: Vec<f64>,
    ss_d: f64,
    mean: f64,
}

fn collect_fit_data(map: &RateMap) -> Option<FitData> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vs = Vec::new();
    for r in 0..map.width {
        for c in 0..map.width {
            let v = map.at(r, c);
            if v.is_finite() {
                xs.push(c as f64);
                ys.push(r as f64);
                vs.push(v);
            }
        }
    }
    if vs.len() < 12 {
        return None;
    }
    let mean = stats::mean(&vs);
    let d: Vec<f64> = vs.iter().map(|v| v - mean).collect();
    let ss_d: f64 = d.iter().map(|v| v * v).sum();
    if ss_d < 1e-12 {
        return None;
    }
    Some(FitData { xs, ys, d, ss_d, mean })
}

/// Covariances of the six demeaned basis maps cos(k_i . x), sin(k_i . x)
/// with the data, and their Gram matrix. The template for any phase offset
/// is a fixed linear combination of these six maps, so once they are in
/// hand each candidate offset costs O(36) flops.
struct CandidateBasis {
    b: [f64; 6],
    g: [[f64; 6]; 6],
}

fn candidate_basis(fd: &FitData, ks: &[[f64; 2]; 3]) -> CandidateBasis {
    let n = fd.d.len();
    let mut cols = vec![[0.0f64; 6]; n];
    let mut means = [0.0f64; 6];
    for (i, col) in cols.iter_mut().enumerate() {
        let (x, y) = (fd.xs[i], fd.ys[i]);
        for j in 0..3 {
            let (s, c) = (ks[j][0] * x + ks[j][1] * y).sin_cos();
            col[j] = c;
            col[3 + j] = s;
        }
        for j in 0..6 {
            means[j] += col[j];
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut b = [0.0f64; 6];
    let mut g = [[0.0f64; 6]; 6];
    for (i, col) in cols.iter().enumerate() {
        let mut v = [0.0f64; 6];
        for j in 0..6 {
            v[j] = col[j] - means[j];
        }
        for j in 0..6 {
            b[j] += v[j] * fd.d[i];
            for l in j..6 {
                g[j][l] += v[j] * v[l];
            }
        }
    }
    for j in 0..6 {
        for l in 0..j {
            g[j][l] = g[l][j];
        }
    }
    CandidateBasis { b, g }
}

/// Pearson correlation of the template with phase offset `x0` (in (x, y))
/// against the data, via cos(k.(x-x0)) = cos(k.x)cos(k.x0) + sin(k.x)sin(k.x0).
fn r_for_phase(cb: &CandidateBasis, ks: &[[f64; 2]; 3], x0: [f64; 2], ss_d: f64) -> f64 {
    let mut w = [0.0f64; 6];
    for j in 0..3 {
        let (s, c) = (ks[j][0] * x0[0] + ks[j][1] * x0[1]).sin_cos();
        w[j] = c;
        w[3 + j] = s;
    }
    let mut cov = 0.0;
    let mut var = 0.0;
    for j in 0..6 {
        cov += w[j] * cb.b[j];
        for l in 0..6 {
            var += w[j] * w[l] * cb.g[j][l];
        }
    }
    if var <= 1e-18 {
        return f64::NEG_INFINITY;
    }
    cov / (var * ss_d).sqrt()
}

/// (r, scale, theta, x0 in (x, y)).
type Candidate = (f64, f64, f64, [f64; 2]);

fn refine_fit(fd: &FitData, start: Candidate, ratio: f64) -> Candidate {
    let mut best = start;
    let mut fs = ratio.sqrt();
    let mut dth = 3f64.to_radians();
    let mut h = best.1 / 12.0;
    for _ in 0..7 {
        let (_, s0, th0, x00) = best;
        for s in [s0 / fs, s0, s0 * fs] {
            for th in [th0 - dth, th0, th0 + dth] {
                let ks = wave_vectors(s, th);
                let cb = candidate_basis(fd, &ks);
                for dx in [-h, 0.0, h] {
                    for dy in [-h, 0.0, h] {
                        let x0 = [x00[0] + dx, x00[1] + dy];
                        let r = r_for_phase(&cb, &ks, x0, fd.ss_d);
                        if r > best.0 {
                            best = (r, s, th, x0);
                        }
                    }
                }
            }
        }
        fs = fs.sqrt();
        dth /= 2.0;
        h /= 2.0;
    }
    best
}

/// Fit the idealised grid pattern to a map by maximising Pearson correlation
/// over (scale, orientation, phase): coarse grid search, then step-halving
/// refinement from the best coarse cells. Amplitude and baseline come from
/// least squares at the optimum.
pub fn fit_ideal_grid(map: &RateMap) -> IdealGridFit {
    let width = map.width;
    let fallback = |mean: f64| IdealGridFit {
        scale: (width as f64 / 2.0).max(2.5),
        theta: 0.0,
        x0: [0.0, 0.0],
        amplitude: 0.0,
        baseline: mean,
        r: 0.0,
        reliable: false,
    };
    let fd = match collect_fit_data(map) {
        Some(fd) => fd,
        None => return fallback(map.max_value().unwrap_or(0.0)),
    };

    // Scales below ~2.3 bins alias on the bin lattice, so the search floor
    // sits just above it.
    let s_lo = 2.5;
    let s_hi = (0.9 * width as f64).max(s_lo * 1.1);
    let n_scale = 32;
    let ratio = (s_hi / s_lo).powf(1.0 / (n_scale as f64 - 1.0));

    let mut coarse: Vec<Candidate> = Vec::new();
    for si in 0..n_scale {
        let s = s_lo * ratio.powi(si);
        for ti in 0..12 {
            let theta = ti as f64 * PI / 36.0;
            let ks = wave_vectors(s, theta);
            let cb = candidate_basis(&fd, &ks);
            let (v1, v2) = lattice_vectors(&ks);
            let mut cell = (f64::NEG_INFINITY, s, theta, [0.0, 0.0]);
            for u in 0..6 {
                for w in 0..6 {
                    let (fu, fw) = (u as f64 / 6.0, w as f64 / 6.0);
                    let x0 = [fu * v1[0] + fw * v2[0], fu * v1[1] + fw * v2[1]];
                    let r = r_for_phase(&cb, &ks, x0, fd.ss_d);
                    if r > cell.0 {
                        cell = (r, s, theta, x0);
                    }
                }
            }
            coarse.push(cell);
        }
    }
    coarse.sort_by(|a, b| b.0.total_cmp(&a.0));

    // The best coarse cells can sit in different basins; refine several
    // distinct ones and keep the winner.
    let mut starts: Vec<Candidate> = Vec::new();
    for cand in &coarse {
        if starts.len() >= 6 {
            break;
        }
        let distinct = starts.iter().all(|s| {
            let ds = (cand.1 / s.1).ln().abs();
            let dt = {
                let d = (cand.2 - s.2).rem_euclid(PI / 3.0);
                d.min(PI / 3.0 - d)
            };
            ds > 1.5 * ratio.ln() || dt > 7f64.to_radians()
        });
        if distinct || starts.is_empty() {
            starts.push(*cand);
        }
    }
    let mut best = (f64::NEG_INFINITY, s_lo, 0.0, [0.0, 0.0]);
    for start in starts {
        let refined = refine_fit(&fd, start, ratio);
        if refined.0 > best.0 {
            best = refined;
        }
    }

    let (_, scale, theta_raw, mut x0) = best;
    let theta = theta_raw.rem_euclid(PI / 3.0);
    let ks = wave_vectors(scale, theta);
    // Reduce the phase into the unit cell of the (possibly re-canonicalised)
    // lattice.
    let (v1, v2) = lattice_vectors(&ks);
    let det = v1[0] * v2[1] - v1[1] * v2[0];
    let m = (x0[0] * v2[1] - x0[1] * v2[0]) / det;
    let n = (v1[0] * x0[1] - v1[1] * x0[0]) / det;
    let (mf, nf) = (m - m.floor(), n - n.floor());
    x0 = [mf * v1[0] + nf * v2[0], mf * v1[1] + nf * v2[1]];

    let t: Vec<f64> = fd
        .xs
        .iter()
        .zip(&fd.ys)
        .map(|(&x, &y)| pattern_sum(&ks, x, y, x0))
        .collect();
    let t_mean = stats::mean(&t);
    let mut ss_t = 0.0;
    let mut cov = 0.0;
    for (ti, di) in t.iter().zip(&fd.d) {
        let tc = ti - t_mean;
        ss_t += tc * tc;
        cov += tc * di;
    }
    if ss_t < 1e-12 {
        return fallback(fd.mean);
    }
    let amplitude = cov / ss_t;
    let baseline = fd.mean - amplitude * t_mean;
    let r = (cov / (ss_t * fd.ss_d).sqrt()).clamp(-1.0, 1.0);
    IdealGridFit {
        scale,
        theta,
        x0: [x0[1], x0[0]],
        amplitude,
        baseline,
        r,
        reliable: r >= 0.3,
    }
}

// ---- peaks and pair measures --------------------------------------------------

/// Highest-valued finite bin, first in row-major order on ties.
pub fn map_peak(map: &RateMap) -> Option<[usize; 2]> {
    let mut best: Option<(f64, usize, usize)> = None;
    for r in 0..map.width {
        for c in 0..map.width {
            let v = map.at(r, c);
            if v.is_finite() && best.map_or(true, |(b, _, _)| v > b) {
                best = Some((v, r, c));
            }
        }
    }
    best.map(|(_, r, c)| [r, c])
}

/// Local maxima at or above 80% of the map maximum, dominating their full
/// 8-neighbourhood (masked neighbours ignored).
pub fn raw_map_peaks(map: &RateMap) -> Vec<[f64; 2]> {
    let w = map.width as isize;
    let max = match map.max_value() {
        Some(m) => m,
        None => return Vec::new(),
    };
    let floor = if max > 0.0 { 0.8 * max } else { max };
    let mut out = Vec::new();
    for r in 0..w {
        for c in 0..w {
            let v = map.at(r as usize, c as usize);
            if !v.is_finite() || v < floor {
                continue;
            }
            let mut dominated = false;
            for dr in -1..=1 {
                for dc in -1..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= w || nc >= w {
                        continue;
                    }
                    let nb = map.at(nr as usize, nc as usize);
                    if nb.is_finite() && nb > v {
                        dominated = true;
                    }
                }
            }
            if !dominated {
                out.push([r as f64, c as f64]);
            }
        }
    }
    out
}

/// Grid activity at a place-field peak: the fitted pattern evaluated there,
/// or the raw map bin when no fit is in play. Masked or out-of-range bins
/// yield no measure.
pub enum GridRef<'a> {
    Fit(&'a IdealGridFit),
    Raw(&'a RateMap),
}

pub fn grid_at_place(grid: GridRef, place_peak: [f64; 2]) -> Option<f64> {
    match grid {
        GridRef::Fit(f) => Some(f.eval(place_peak)),
        GridRef::Raw(m) => {
            let r = place_peak[0].round();
            let c = place_peak[1].round();
            if r < 0.0 || c < 0.0 || r >= m.width as f64 || c >= m.width as f64 {
                return None;
            }
            let v = m.at(r as usize, c as usize);
            v.is_finite().then_some(v)
        }
    }
}

/// Minimum Euclidean distance from the place peak to any grid peak, divided
/// by the grid scale.
pub fn min_dist(grid_peaks: &[[f64; 2]], place_peak: [f64; 2], scale: f64) -> Option<f64> {
    assert!(scale > 0.0, "grid scale must be positive");
    grid_peaks
        .iter()
        .map(|p| ((p[0] - place_peak[0]).powi(2) + (p[1] - place_peak[1]).powi(2)).sqrt())
        .fold(None, |acc: Option<f64>, d| {
            Some(acc.map_or(d, |a| a.min(d)))
        })
        .map(|d| d / scale)
}

// ---- filters -------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    /// Grid units admitted iff score strictly exceeds this (when set).
    pub score_min: Option<f64>,
    /// Grid units admitted iff fitted scale is at most this, in bins (when set).
    pub scale_max: Option<f64>,
    /// Place units admitted iff their peak sits at least this far (in bins)
    /// from every border.
    pub border_margin: f64,
}

impl FilterThresholds {
    /// Model activity maps: keep every unit, drop only border place peaks.
    pub fn model_maps() -> FilterThresholds {
        FilterThresholds {
            score_min: None,
            scale_max: None,
            border_margin: 1.0,
        }
    }

    /// Recording-style thresholds scaled to a map of `width` bins spanning a
    /// square arena: score > 0.8, scale within half the arena, peaks at least
    /// a tenth of the arena from the borders.
    pub fn recorded(width: usize) -> FilterThresholds {
        FilterThresholds {
            score_min: Some(0.8),
            scale_max: Some(width as f64 / 2.0),
            border_margin: 0.1 * width as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Admitted {
    pub grids: Vec<usize>,
    pub places: Vec<usize>,
}

fn border_distance(width: usize, r: usize, c: usize) -> f64 {
    let w = width as f64 - 1.0;
    (r as f64).min(c as f64).min(w - r as f64).min(w - c as f64)
}

/// Apply the unit filters. A missing score or scale excludes the unit only
/// when the corresponding threshold is active.
pub fn filter_cells(
    grid_scores: &[Option<f64>],
    grid_scales: &[Option<f64>],
    place_maps: &[RateMap],
    th: &FilterThresholds,
) -> Admitted {
    assert_eq!(grid_scores.len(), grid_scales.len());
    let grids = (0..grid_scores.len())
        .filter(|&i| {
            let score_ok = match th.score_min {
                None => true,
                Some(min) => grid_scores[i].is_some_and(|s| s > min),
            };
            let scale_ok = match th.scale_max {
                None => true,
                Some(max) => grid_scales[i].is_some_and(|s| s <= max),
            };
            score_ok && scale_ok
        })
        .collect();
    let places = place_maps
        .iter()
        .enumerate()
        .filter(|(_, m)| {
            map_peak(m).is_some_and(|[r, c]| border_distance(m.width, r, c) >= th.border_margin)
        })
        .map(|(i, _)| i)
        .collect();
    Admitted { grids, places }
}

// ---- cross-trial correlation and nulls ------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeasureKind {
    GridAtPlace,
    MinDist,
}

impl MeasureKind {
    pub fn name(self) -> &'static str {
        match self {
            MeasureKind::GridAtPlace => "gridAtPlace",
            MeasureKind::MinDist => "minDist",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrialData {
    pub grid_maps: Vec<RateMap>,
    pub place_maps: Vec<RateMap>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub measure: MeasureKind,
    /// Evaluate grid activity through fitted ideal patterns instead of raw
    /// map bins. Required for the peak-distance measure.
    pub use_ideal_fits: bool,
    pub thresholds: FilterThresholds,
    pub n_shuffles: usize,
    pub seed: u64,
    pub min_pairs: usize,
}

impl Default for AnalysisConfig {
    fn default() -> AnalysisConfig {
        AnalysisConfig {
            measure: MeasureKind::GridAtPlace,
            use_ideal_fits: false,
            thresholds: FilterThresholds::model_maps(),
            n_shuffles: 1000,
            seed: 0,
            min_pairs: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairMeasure {
    pub grid: usize,
    pub place: usize,
    pub trial: usize,
    pub grid_at_place: Option<f64>,
    pub min_dist: Option<f64>,
}

/// Pearson correlation over pairs measured in both trials.
pub fn correlate_pairs(
    a: &[Option<f64>],
    b: &[Option<f64>],
    min_pairs: usize,
) -> Result<(f64, usize), AnalysisError> {
    assert_eq!(a.len(), b.len(), "pair tables differ in length");
    let (xs, ys): (Vec<f64>, Vec<f64>) = a.iter().zip(b).filter_map(|(x, y)| x.zip(*y)).unzip();
    if xs.len() < min_pairs {
        return Err(AnalysisError::TooFewPairs {
            found: xs.len(),
            needed: min_pairs,
        });
    }
    let r = stats::pearson(&xs, &ys)
        .ok_or_else(|| AnalysisError::Degenerate("pair measures have zero variance".into()))?;
    Ok((r, xs.len()))
}

pub fn toroidal_shift(map: &RateMap, dr: usize, dc: usize) -> RateMap {
    let w = map.width;
    let mut out = RateMap::new(w);
    for r in 0..w {
        for c in 0..w {
            out.set((r + dr) % w, (c + dc) % w, map.at(r, c));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct NullResult {
    pub r_obs: f64,
    pub null: Vec<f64>,
    /// Fraction of finite null correlations at or above the observed one.
    pub p: f64,
    pub n_pairs: usize,
    pub n_shuffles: usize,
}

fn shuffle_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn null_p(null: &[f64], r_obs: f64) -> f64 {
    let hits = null.iter().filter(|r| r.is_finite() && **r >= r_obs).count();
    hits as f64 / null.len() as f64
}

/// Everything needed to recompute the cross-trial measure correlation under
/// shifted place maps: admitted units, their fits, grid peak lattices, and
/// unshifted place peaks. Shifting a map toroidally moves its peak by the
/// same offset, so shuffles only move peak positions.
pub struct PreparedAnalysis {
    width: usize,
    measure: MeasureKind,
    use_fits: bool,
    min_pairs: usize,
    pub grid_ids: Vec<usize>,
    pub place_ids: Vec<usize>,
    grid_maps: [Vec<RateMap>; 2],
    fits: [Vec<Option<IdealGridFit>>; 2],
    peaks: [Vec<Vec<[f64; 2]>>; 2],
    place_peaks: [Vec<[usize; 2]>; 2],
}

pub fn prepare(
    a: &TrialData,
    b: &TrialData,
    cfg: &AnalysisConfig,
) -> Result<PreparedAnalysis, AnalysisError> {
    if cfg.measure == MeasureKind::MinDist && !cfg.use_ideal_fits {
        return Err(AnalysisError::MinDistNeedsFits);
    }
    if a.grid_maps.len() != b.grid_maps.len() || a.place_maps.len() != b.place_maps.len() {
        return Err(AnalysisError::Degenerate(
            "trials disagree on unit counts".into(),
        ));
    }
    let trials = [a, b];
    let width = trials
        .iter()
        .flat_map(|t| t.grid_maps.iter().chain(&t.place_maps))
        .map(|m| m.width)
        .next()
        .ok_or_else(|| AnalysisError::Degenerate("no maps".into()))?;
    if trials
        .iter()
        .flat_map(|t| t.grid_maps.iter().chain(&t.place_maps))
        .any(|m| m.width != width)
    {
        return Err(AnalysisError::Degenerate("map widths differ".into()));
    }

    let need_fits =
        cfg.use_ideal_fits || cfg.thresholds.scale_max.is_some() || cfg.measure == MeasureKind::MinDist;
    let need_scores = cfg.thresholds.score_min.is_some();

    let mut admitted: Vec<Admitted> = Vec::new();
    let mut all_fits: Vec<Vec<Option<IdealGridFit>>> = Vec::new();
    for t in trials {
        let fits: Vec<Option<IdealGridFit>> = t
            .grid_maps
            .iter()
            .map(|m| need_fits.then(|| fit_ideal_grid(m)))
            .collect();
        let scores: Vec<Option<f64>> = t
            .grid_maps
            .iter()
            .map(|m| {
                if need_scores {
                    autocorrelogram(m)
                        .ok()
                        .and_then(|ac| grid_score(&ac, GridKind::Hexagonal))
                } else {
                    None
                }
            })
            .collect();
        let scales: Vec<Option<f64>> = fits
            .iter()
            .map(|f| f.as_ref().map(|f| f.scale))
            .collect();
        admitted.push(filter_cells(&scores, &scales, &t.place_maps, &cfg.thresholds));
        all_fits.push(fits);
    }

    let grid_ids: Vec<usize> = admitted[0]
        .grids
        .iter()
        .filter(|i| admitted[1].grids.contains(i))
        .copied()
        .collect();
    let place_ids: Vec<usize> = admitted[0]
        .places
        .iter()
        .filter(|i| admitted[1].places.contains(i))
        .copied()
        .collect();

    let mut grid_maps: [Vec<RateMap>; 2] = [Vec::new(), Vec::new()];
    let mut fits: [Vec<Option<IdealGridFit>>; 2] = [Vec::new(), Vec::new()];
    let mut peaks: [Vec<Vec<[f64; 2]>>; 2] = [Vec::new(), Vec::new()];
    let mut place_peaks: [Vec<[usize; 2]>; 2] = [Vec::new(), Vec::new()];
    for t in 0..2 {
        for &gi in &grid_ids {
            let fit = all_fits[t][gi].clone();
            peaks[t].push(
                fit.as_ref()
                    .map(|f| ideal_grid_peaks(f, width))
                    .unwrap_or_default(),
            );
            fits[t].push(fit);
            grid_maps[t].push(trials[t].grid_maps[gi].clone());
        }
        for &pi in &place_ids {
            // Guaranteed by the border filter.
            place_peaks[t].push(map_peak(&trials[t].place_maps[pi]).expect("admitted place map"));
        }
    }

    Ok(PreparedAnalysis {
        width,
        measure: cfg.measure,
        use_fits: cfg.use_ideal_fits,
        min_pairs: cfg.min_pairs,
        grid_ids,
        place_ids,
        grid_maps,
        fits,
        peaks,
        place_peaks,
    })
}

impl PreparedAnalysis {
    pub fn n_pairs(&self) -> usize {
        self.grid_ids.len() * self.place_ids.len()
    }

    /// Measures for one trial with each admitted place map shifted toroidally
    /// by `shifts[slot]`. Zero shifts reproduce the observed measures.
    pub fn measures(&self, trial: usize, shifts: &[[usize; 2]]) -> Vec<Option<f64>> {
        assert_eq!(shifts.len(), self.place_ids.len());
        let w = self.width;
        let mut out = Vec::with_capacity(self.n_pairs());
        for gi in 0..self.grid_ids.len() {
            for (pi, shift) in shifts.iter().enumerate() {
                let [pr, pc] = self.place_peaks[trial][pi];
                let peak = [((pr + shift[0]) % w) as f64, ((pc + shift[1]) % w) as f64];
                let v = match self.measure {
                    MeasureKind::GridAtPlace => match (&self.fits[trial][gi], self.use_fits) {
                        (Some(f), true) => grid_at_place(GridRef::Fit(f), peak),
                        _ => grid_at_place(GridRef::Raw(&self.grid_maps[trial][gi]), peak),
                    },
                    MeasureKind::MinDist => {
                        let f = self.fits[trial][gi].as_ref().expect("fits required");
                        min_dist(&self.peaks[trial][gi], peak, f.scale)
                    }
                };
                out.push(v);
            }
        }
        out
    }

    pub fn pair_measures(&self, trial: usize) -> Vec<PairMeasure> {
        let mut out = Vec::with_capacity(self.n_pairs());
        for (gi, &grid) in self.grid_ids.iter().enumerate() {
            for (pi, &place) in self.place_ids.iter().enumerate() {
                let [pr, pc] = self.place_peaks[trial][pi];
                let peak = [pr as f64, pc as f64];
                let gap = match (&self.fits[trial][gi], self.use_fits) {
                    (Some(f), true) => grid_at_place(GridRef::Fit(f), peak),
                    _ => grid_at_place(GridRef::Raw(&self.grid_maps[trial][gi]), peak),
                };
                let md = self.fits[trial][gi]
                    .as_ref()
                    .and_then(|f| min_dist(&self.peaks[trial][gi], peak, f.scale));
                out.push(PairMeasure {
                    grid,
                    place,
                    trial,
                    grid_at_place: gap,
                    min_dist: md,
                });
            }
        }
        out
    }

    pub fn observed(&self) -> Result<(f64, usize), AnalysisError> {
        let zero = vec![[0usize; 2]; self.place_ids.len()];
        correlate_pairs(
            &self.measures(0, &zero),
            &self.measures(1, &zero),
            self.min_pairs,
        )
    }

    /// Null distribution from independent uniform toroidal shifts of every
    /// place map in both trials. Unit admission stays fixed at the observed
    /// data; iterations whose correlation is undefined count as misses.
    pub fn shuffle_null(&self, n_shuffles: usize, seed: u64) -> Result<NullResult, AnalysisError> {
        assert!(n_shuffles >= 100, "need at least 100 shuffles");
        let (r_obs, n_pairs) = self.observed()?;
        let w = self.width;
        let mut null = Vec::with_capacity(n_shuffles);
        for k in 0..n_shuffles {
            let mut rng = shuffle_rng(seed, k);
            let draw = |rng: &mut ChaCha8Rng| -> Vec<[usize; 2]> {
                (0..self.place_ids.len())
                    .map(|_| [rng.random_range(0..w), rng.random_range(0..w)])
                    .collect()
            };
            let sa = draw(&mut rng);
            let sb = draw(&mut rng);
            let r = correlate_pairs(&self.measures(0, &sa), &self.measures(1, &sb), self.min_pairs)
                .map(|(r, _)| r)
                .unwrap_or(f64::NAN);
            null.push(r);
        }
        let p = null_p(&null, r_obs);
        Ok(NullResult {
            r_obs,
            null,
            p,
            n_pairs,
            n_shuffles,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub measure: String,
    pub r_obs: f64,
    pub p: f64,
    pub n_pairs: usize,
    pub n_shuffles: usize,
    pub filters: FilterThresholds,
}

pub fn analyze_remapping(
    a: &TrialData,
    b: &TrialData,
    cfg: &AnalysisConfig,
) -> Result<(AnalysisReport, NullResult), AnalysisError> {
    let prep = prepare(a, b, cfg)?;
    let null = prep.shuffle_null(cfg.n_shuffles, cfg.seed)?;
    let report = AnalysisReport {
        measure: cfg.measure.name().to_string(),
        r_obs: null.r_obs,
        p: null.p,
        n_pairs: null.n_pairs,
        n_shuffles: null.n_shuffles,
        filters: cfg.thresholds.clone(),
    };
    Ok((report, null))
}

/// Is the unit-by-unit rate map correlation structure shared between two
/// environments? Correlates the off-diagonal upper triangles of the two
/// unit correlation matrices; the null shifts every second-environment map
/// independently.
pub fn grid_corr_matrix_test(
    env1: &[RateMap],
    env2: &[RateMap],
    n_shuffles: usize,
    seed: u64,
) -> Result<NullResult, AnalysisError> {
    assert!(n_shuffles >= 100, "need at least 100 shuffles");
    if env1.len() != env2.len() {
        return Err(AnalysisError::Degenerate("unit sets differ in size".into()));
    }
    let n = env1.len();
    if n < 3 {
        return Err(AnalysisError::Degenerate(
            "need at least 3 units for a correlation matrix".into(),
        ));
    }
    let width = env1[0].width;
    if env1.iter().chain(env2).any(|m| m.width != width) {
        return Err(AnalysisError::Degenerate("map widths differ".into()));
    }
    let triangle = |maps: &[RateMap]| -> Vec<f64> {
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push(stats::pearson(&maps[i].values, &maps[j].values).unwrap_or(f64::NAN));
            }
        }
        out
    };
    let t1 = triangle(env1);
    let t2 = triangle(env2);
    let r_obs = stats::pearson(&t1, &t2)
        .ok_or_else(|| AnalysisError::Degenerate("correlation matrices are flat".into()))?;
    let mut null = Vec::with_capacity(n_shuffles);
    for k in 0..n_shuffles {
        let mut rng = shuffle_rng(seed, k);
        let shifted: Vec<RateMap> = env2
            .iter()
            .map(|m| toroidal_shift(m, rng.random_range(0..width), rng.random_range(0..width)))
            .collect();
        null.push(stats::pearson(&t1, &triangle(&shifted)).unwrap_or(f64::NAN));
    }
    let p = null_p(&null, r_obs);
    Ok(NullResult {
        r_obs,
        null,
        p,
        n_pairs: t1.len(),
        n_shuffles,
    })
}
