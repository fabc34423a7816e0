//! Behavioral curves and spatial rate-map metrics for trained agents.
//!
//! The rollout driver replays a walk through the model without gradients and
//! records unit activity plus the identity predicted for the next vertex
//! before it is observed. Event bookkeeping over the walk then classifies
//! every arrival into exactly one of {first visit, revisit via seen edge,
//! revisit via novel edge, stay}, and the curves are computed from the
//! stated subsets only.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, TapeError};
use crate::model::{step, ModelParams, StateSnapshot, StepInputs, StepState};
use crate::stats;
use crate::worldgen::{Action, Environment, Step};

/// Steps per throwaway tape while replaying; bounds memory, not math.
pub const EVAL_WINDOW: usize = 50;

/// Vertices need this many post-burn-in visits before their bin is trusted.
pub const MIN_VISITS: usize = 3;

/// Steps discarded at the start of a map-building walk.
pub const MAP_BURN_IN: usize = 200;

/// Offsets with fewer overlapping valid bins are excluded from
/// autocorrelograms.
pub const MIN_OVERLAP_BINS: usize = 20;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("map is degenerate (fewer than two distinct finite values)")]
    DegenerateMap,
    #[error("map widths differ: {a} vs {b}")]
    WidthMismatch { a: usize, b: usize },
    #[error("unit counts differ: {a} vs {b}")]
    UnitCountMismatch { a: usize, b: usize },
    #[error("bad rate-map csv: {0}")]
    BadCsv(String),
}

// ---------------------------------------------------------------------------
// Walk replay

/// Activity and prediction recorded at one replayed step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RolloutSample {
    pub vertex: usize,
    /// Structural-layer activity (all bands concatenated).
    pub g: Vec<f64>,
    /// Conjunctive-layer activity.
    pub p: Vec<f64>,
    /// Smoothed compressed stimulus, one unit per slot and band.
    pub x: Vec<f64>,
    /// Argmax identity predicted for the next vertex, before observing it.
    pub predicted_next: u16,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Replay `steps` through the model, carrying state across fixed-size tapes.
/// The final walk step is lookahead only and yields no sample.
pub fn rollout_states(
    params: &ModelParams,
    env: &Environment,
    steps: &[Step],
    window: usize,
) -> Result<Vec<RolloutSample>, TapeError> {
    assert!(steps.len() >= 2, "need at least one step plus lookahead");
    assert!(window >= 1);
    let hp = &params.hp;
    let mut samples = Vec::with_capacity(steps.len() - 1);
    let mut snapshot: Option<StateSnapshot> = None;
    let mut t0 = 0;
    while t0 < steps.len() - 1 {
        let t1 = (t0 + window).min(steps.len() - 1);
        let mut tape = Tape::new();
        let mv = params.bind(&mut tape);
        let mut state = match &snapshot {
            Some(s) => StepState::resume(&mut tape, hp, s),
            None => StepState::fresh(&mut tape, hp, &mv),
        };
        for t in t0..t1 {
            let inp = StepInputs {
                action: steps[t].action,
                stimulus: steps[t].stimulus as usize,
                next_action: steps[t + 1].action,
                next_stimulus: steps[t + 1].stimulus as usize,
                shiny_here: env.is_shiny(steps[t].vertex),
                train_here: true,
                train_next: true,
            };
            let out = step(&mut tape, hp, &mv, state, &inp)?;
            let x = out
                .state
                .x_bands
                .iter()
                .flat_map(|&b| tape.value(b).iter().copied())
                .collect();
            samples.push(RolloutSample {
                vertex: steps[t].vertex,
                g: tape.value(out.g_inf).to_vec(),
                p: tape.value(out.p_inf).to_vec(),
                x,
                predicted_next: argmax(tape.value(out.logits_next)) as u16,
            });
            state = out.state;
        }
        snapshot = Some(state.snapshot(&tape));
        t0 = t1;
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Event log

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    FirstVisit,
    SeenEdgeRevisit,
    NovelEdgeRevisit,
    Stay,
}

/// One predicted arrival. `visit_count` counts arrivals at the vertex before
/// this event; for stays it includes the arrival that began the current
/// occupancy, so a stay right after discovering a vertex reads 1.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub vertex: usize,
    pub kind: EventKind,
    pub visit_count: usize,
    pub novel_edge: bool,
    pub steps_since_visit: Option<usize>,
    pub first_stay: bool,
    /// Fraction of all vertices seen strictly before this step.
    pub visited_fraction: f64,
    pub predicted: u16,
    pub actual: u16,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalLog {
    pub n_s: usize,
    pub records: Vec<EvalRecord>,
}

impl EvalLog {
    pub fn chance(&self) -> f64 {
        1.0 / self.n_s as f64
    }

    /// Pool records from walks that share a stimulus alphabet.
    pub fn merge(logs: impl IntoIterator<Item = EvalLog>) -> EvalLog {
        let mut out = EvalLog::default();
        for log in logs {
            if out.n_s == 0 {
                out.n_s = log.n_s;
            }
            assert_eq!(out.n_s, log.n_s, "merged logs must share n_s");
            out.records.extend(log.records);
        }
        out
    }
}

/// Classify every arrival of `steps` given the model's next-identity
/// predictions (`predictions[t]` is for `steps[t + 1]`).
pub fn build_eval_log(
    env: &Environment,
    steps: &[Step],
    predictions: &[u16],
    n_s: usize,
) -> EvalLog {
    assert!(steps.len() >= 2);
    assert_eq!(predictions.len(), steps.len() - 1);
    let total = env.vertex_count() as f64;

    let mut arrivals: HashMap<usize, usize> = HashMap::new();
    let mut last_at: HashMap<usize, usize> = HashMap::new();
    let mut seen_edges: HashSet<(usize, usize)> = HashSet::new();
    let mut stayed: HashSet<usize> = HashSet::new();
    let mut visited: HashSet<usize> = HashSet::new();

    let v0 = steps[0].vertex;
    arrivals.insert(v0, 1);
    last_at.insert(v0, 0);
    visited.insert(v0);

    let mut records = Vec::with_capacity(steps.len() - 1);
    for t in 1..steps.len() {
        let u = steps[t - 1].vertex;
        let v = steps[t].vertex;
        let visited_fraction = visited.len() as f64 / total;
        let prior_arrivals = arrivals.get(&v).copied().unwrap_or(0);
        let steps_since_visit = last_at.get(&v).map(|&s| t - s);

        let kind = if steps[t].action == Action::Stay {
            debug_assert_eq!(u, v, "stays keep the vertex");
            EventKind::Stay
        } else if prior_arrivals == 0 {
            EventKind::FirstVisit
        } else if !seen_edges.contains(&(u, v)) {
            EventKind::NovelEdgeRevisit
        } else {
            EventKind::SeenEdgeRevisit
        };
        let first_stay = kind == EventKind::Stay && !stayed.contains(&v);
        // Arrivals are counted after recording, so this reads "arrivals
        // before this one" for moves and "arrivals so far" for stays.
        let visit_count = prior_arrivals;
        records.push(EvalRecord {
            step: t,
            vertex: v,
            kind,
            visit_count,
            novel_edge: kind == EventKind::NovelEdgeRevisit,
            steps_since_visit,
            first_stay,
            visited_fraction,
            predicted: predictions[t - 1],
            actual: steps[t].stimulus,
        });

        if kind == EventKind::Stay {
            stayed.insert(v);
        } else {
            *arrivals.entry(v).or_insert(0) += 1;
            seen_edges.insert((u, v));
        }
        last_at.insert(v, t);
        visited.insert(v);
    }
    EvalLog { n_s, records }
}

/// Replay a walk and log every predicted arrival.
pub fn evaluate_walk(
    params: &ModelParams,
    env: &Environment,
    steps: &[Step],
) -> Result<EvalLog, TapeError> {
    let samples = rollout_states(params, env, steps, EVAL_WINDOW)?;
    let predictions: Vec<u16> = samples.iter().map(|s| s.predicted_next).collect();
    Ok(build_eval_log(env, steps, &predictions, params.hp.n_s))
}

// ---------------------------------------------------------------------------
// Behavioral curves

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveBin {
    pub label: String,
    pub n: usize,
    pub correct: usize,
}

impl CurveBin {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.n as f64
    }
}

fn collect_bins<'a>(
    events: impl Iterator<Item = (&'a EvalRecord, usize)>,
    labels: &[String],
) -> Vec<CurveBin> {
    let mut n = vec![0usize; labels.len()];
    let mut correct = vec![0usize; labels.len()];
    for (rec, bin) in events {
        n[bin] += 1;
        if rec.predicted == rec.actual {
            correct[bin] += 1;
        }
    }
    labels
        .iter()
        .zip(n.iter().zip(&correct))
        .filter(|(_, (&n, _))| n > 0)
        .map(|(label, (&n, &correct))| CurveBin {
            label: label.clone(),
            n,
            correct,
        })
        .collect()
}

/// Recall on the first stay at each vertex, binned by how often the vertex
/// had been visited. Empty bins are absent, never zero.
pub fn one_shot_curve(log: &EvalLog) -> Vec<CurveBin> {
    let labels: Vec<String> = (1..=8)
        .map(|k| k.to_string())
        .chain(std::iter::once("9+".to_string()))
        .collect();
    collect_bins(
        log.records.iter().filter(|r| r.first_stay).map(|r| {
            debug_assert!(r.visit_count >= 1, "stays happen at visited vertices");
            (r, (r.visit_count - 1).min(8))
        }),
        &labels,
    )
}

/// Link inference: accuracy on novel-edge arrivals at already-visited
/// vertices, binned by the fraction of all vertices seen so far.
pub fn zero_shot_curve(log: &EvalLog) -> Vec<CurveBin> {
    let labels: Vec<String> = (0..10)
        .map(|i| format!("{:.1}-{:.1}", i as f64 / 10.0, (i + 1) as f64 / 10.0))
        .collect();
    collect_bins(
        log.records
            .iter()
            .filter(|r| r.kind == EventKind::NovelEdgeRevisit)
            .map(|r| (r, ((r.visited_fraction * 10.0) as usize).min(9))),
        &labels,
    )
}

pub const RECENCY_LABELS: [&str; 7] = ["1", "2-5", "6-10", "11-25", "26-50", "51-100", "101+"];

pub fn recency_bin(steps_since: usize) -> usize {
    match steps_since {
        0 => unreachable!("revisit gaps are positive"),
        1 => 0,
        2..=5 => 1,
        6..=10 => 2,
        11..=25 => 3,
        26..=50 => 4,
        51..=100 => 5,
        _ => 6,
    }
}

/// Retention: accuracy on every return to a known vertex, binned by the gap
/// since the agent last stood there. Brackets the 25-step training window.
pub fn long_term_curve(log: &EvalLog) -> Vec<CurveBin> {
    let labels: Vec<String> = RECENCY_LABELS.iter().map(|s| s.to_string()).collect();
    collect_bins(
        log.records
            .iter()
            .filter_map(|r| r.steps_since_visit.map(|d| (r, recency_bin(d)))),
        &labels,
    )
}

pub fn curve_to_csv(bins: &[CurveBin], chance: f64) -> String {
    let mut out = String::from("bin,n,accuracy,chance\n");
    for b in bins {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            b.label,
            b.n,
            b.accuracy(),
            chance
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Rate maps

/// Mean unit activity over a square board. Bins visited fewer than
/// `MIN_VISITS` times hold NaN and are skipped by every consumer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateMap {
    pub width: usize,
    pub values: Vec<f64>,
}

impl RateMap {
    pub fn new(width: usize) -> RateMap {
        RateMap {
            width,
            values: vec![f64::NAN; width * width],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.values[row * self.width + col] = v;
    }

    pub fn valid_bins(&self) -> usize {
        self.values.iter().filter(|v| v.is_finite()).count()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    Grid,
    Place,
    SmoothedSensory,
}

impl Layer {
    pub fn name(self) -> &'static str {
        match self {
            Layer::Grid => "grid",
            Layer::Place => "place",
            Layer::SmoothedSensory => "sensory",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RateMapOptions {
    pub burn_in: usize,
    pub min_visits: usize,
}

impl Default for RateMapOptions {
    fn default() -> Self {
        RateMapOptions {
            burn_in: MAP_BURN_IN,
            min_visits: MIN_VISITS,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateMapSet {
    pub layer: Layer,
    pub width: usize,
    pub maps: Vec<RateMap>,
    /// Post-burn-in step counts per vertex; sums to samples − burn-in.
    pub occupancy: Vec<usize>,
    pub min_visits: usize,
}

impl RateMapSet {
    /// Vertices whose occupancy fell below the threshold; callers warn.
    pub fn uncovered(&self) -> Vec<usize> {
        self.occupancy
            .iter()
            .enumerate()
            .filter(|(_, &o)| o < self.min_visits)
            .map(|(v, _)| v)
            .collect()
    }
}

fn layer_values(sample: &RolloutSample, layer: Layer) -> &[f64] {
    match layer {
        Layer::Grid => &sample.g,
        Layer::Place => &sample.p,
        Layer::SmoothedSensory => &sample.x,
    }
}

/// Bin already-replayed activity into per-unit maps.
pub fn rate_maps_from_samples(
    env: &Environment,
    samples: &[RolloutSample],
    layer: Layer,
    opts: &RateMapOptions,
) -> RateMapSet {
    let width = env.width;
    let vertices = env.vertex_count();
    let tail = if opts.burn_in < samples.len() {
        &samples[opts.burn_in..]
    } else {
        &[]
    };
    let units = tail.first().map_or(0, |s| layer_values(s, layer).len());
    let mut sums = vec![vec![0.0f64; vertices]; units];
    let mut occupancy = vec![0usize; vertices];
    for s in tail {
        occupancy[s.vertex] += 1;
        for (u, &a) in layer_values(s, layer).iter().enumerate() {
            sums[u][s.vertex] += a;
        }
    }
    let maps = (0..units)
        .map(|u| {
            let mut map = RateMap::new(width);
            for v in 0..vertices {
                if occupancy[v] >= opts.min_visits {
                    let (r, c) = env.coords(v);
                    map.set(r, c, sums[u][v] / occupancy[v] as f64);
                }
            }
            map
        })
        .collect();
    RateMapSet {
        layer,
        width,
        maps,
        occupancy,
        min_visits: opts.min_visits,
    }
}

/// Replay a walk and build one map per unit of the requested layer.
pub fn compute_rate_maps(
    params: &ModelParams,
    env: &Environment,
    steps: &[Step],
    layer: Layer,
    opts: &RateMapOptions,
) -> Result<RateMapSet, TapeError> {
    let samples = rollout_states(params, env, steps, EVAL_WINDOW)?;
    Ok(rate_maps_from_samples(env, &samples, layer, opts))
}

// ---------------------------------------------------------------------------
// Autocorrelograms and grid scores

/// Spatial autocorrelation over offsets; (2w−1)² array centered on zero lag.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Autocorrelogram {
    pub size: usize,
    pub values: Vec<f64>,
}

impl Autocorrelogram {
    pub fn center(&self) -> isize {
        (self.size / 2) as isize
    }

    pub fn at(&self, dr: isize, dc: isize) -> f64 {
        let c = self.center();
        let (r, q) = (dr + c, dc + c);
        if r < 0 || q < 0 || r >= self.size as isize || q >= self.size as isize {
            return f64::NAN;
        }
        self.values[r as usize * self.size + q as usize]
    }
}

pub fn autocorrelogram(map: &RateMap) -> Result<Autocorrelogram, MetricsError> {
    let finite: Vec<f64> = map.values.iter().copied().filter(|v| v.is_finite()).collect();
    let distinct = {
        let mut s = finite.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.dedup_by(|a, b| (*a - *b).abs() < 1e-300);
        s.len()
    };
    if distinct < 2 {
        return Err(MetricsError::DegenerateMap);
    }
    let w = map.width as isize;
    let size = (2 * w - 1) as usize;
    let mut values = vec![f64::NAN; size * size];
    for dr in -(w - 1)..w {
        for dc in -(w - 1)..w {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for r in 0..w {
                for c in 0..w {
                    let (r2, c2) = (r + dr, c + dc);
                    if r2 < 0 || c2 < 0 || r2 >= w || c2 >= w {
                        continue;
                    }
                    let v1 = map.at(r as usize, c as usize);
                    let v2 = map.at(r2 as usize, c2 as usize);
                    if v1.is_finite() && v2.is_finite() {
                        a.push(v1);
                        b.push(v2);
                    }
                }
            }
            if a.len() >= MIN_OVERLAP_BINS {
                if let Some(r) = stats::pearson(&a, &b) {
                    let idx = ((dr + w - 1) * (2 * w - 1) + (dc + w - 1)) as usize;
                    values[idx] = r;
                }
            }
        }
    }
    Ok(Autocorrelogram { size, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Hexagonal,
    Square,
}

/// Mean autocorrelation per integer ring of lag radius.
fn radial_profile(ac: &Autocorrelogram) -> Vec<f64> {
    let c = ac.center();
    let mut sums = vec![0.0f64; c as usize + 1];
    let mut counts = vec![0usize; c as usize + 1];
    for dr in -c..=c {
        for dc in -c..=c {
            let ring = ((dr * dr + dc * dc) as f64).sqrt().round() as usize;
            if ring >= sums.len() {
                continue;
            }
            let v = ac.at(dr, dc);
            if v.is_finite() {
                sums[ring] += v;
                counts[ring] += 1;
            }
        }
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &n)| if n > 0 { s / n as f64 } else { f64::NAN })
        .collect()
}

/// Radius of the first dip after the central peak; None when the profile
/// never turns back up or crosses zero.
fn first_trough_radius(ac: &Autocorrelogram) -> Option<f64> {
    let p = radial_profile(ac);
    for r in 1..p.len().saturating_sub(1) {
        if p[r - 1].is_finite()
            && p[r].is_finite()
            && p[r + 1].is_finite()
            && p[r] <= p[r - 1]
            && p[r] < p[r + 1]
        {
            return Some(r as f64);
        }
    }
    (1..p.len())
        .find(|&r| p[r].is_finite() && p[r] < 0.0)
        .map(|r| r as f64)
}

/// Sample the autocorrelogram at a fractional lag. Near-integer coordinates
/// snap to the grid so exact 90° rotations stay exact.
fn sample_ac(ac: &Autocorrelogram, dr: f64, dc: f64) -> f64 {
    let snap = |x: f64| {
        if (x - x.round()).abs() < 1e-9 {
            x.round()
        } else {
            x
        }
    };
    let (dr, dc) = (snap(dr), snap(dc));
    let (r0, c0) = (dr.floor(), dc.floor());
    let (fr, fc) = (dr - r0, dc - c0);
    let mut value = 0.0;
    for (gr, wr) in [(r0, 1.0 - fr), (r0 + 1.0, fr)] {
        for (gc, wc) in [(c0, 1.0 - fc), (c0 + 1.0, fc)] {
            let weight = wr * wc;
            if weight == 0.0 {
                continue;
            }
            let v = ac.at(gr as isize, gc as isize);
            if !v.is_finite() {
                return f64::NAN;
            }
            value += weight * v;
        }
    }
    value
}

/// Correlation between the autocorrelogram and itself rotated by `deg`,
/// over the annulus [r_lo, r_hi].
fn rotational_correlation(ac: &Autocorrelogram, r_lo: f64, r_hi: f64, deg: f64) -> Option<f64> {
    let (sin, cos) = deg.to_radians().sin_cos();
    let c = ac.center();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for dr in -c..=c {
        for dc in -c..=c {
            let dist = ((dr * dr + dc * dc) as f64).sqrt();
            if dist < r_lo - 1e-9 || dist > r_hi + 1e-9 {
                continue;
            }
            let v0 = ac.at(dr, dc);
            if !v0.is_finite() {
                continue;
            }
            let (fr, fc) = (dr as f64, dc as f64);
            let v1 = sample_ac(ac, cos * fr - sin * fc, sin * fr + cos * fc);
            if v1.is_finite() {
                a.push(v0);
                b.push(v1);
            }
        }
    }
    if a.len() < MIN_OVERLAP_BINS {
        return None;
    }
    stats::pearson(&a, &b)
}

/// Rotational grid score. Hexagonal: min(60°,120°) − max(30°,90°,150°);
/// square: 90° − max(45°,135°). None when the annulus cannot be determined.
pub fn grid_score(ac: &Autocorrelogram, kind: GridKind) -> Option<f64> {
    let r_lo = first_trough_radius(ac)?;
    let r_hi = ac.center() as f64;
    if r_lo >= r_hi {
        return None;
    }
    let corr = |deg: f64| rotational_correlation(ac, r_lo, r_hi, deg);
    match kind {
        GridKind::Hexagonal => {
            let on = corr(60.0)?.min(corr(120.0)?);
            let off = corr(30.0)?.max(corr(90.0)?).max(corr(150.0)?);
            Some(on - off)
        }
        GridKind::Square => {
            let on = corr(90.0)?;
            let off = corr(45.0)?.max(corr(135.0)?);
            Some(on - off)
        }
    }
}

/// Per-unit Pearson correlation of same-layer maps across two environments.
pub fn cross_env_correlation(
    a: &RateMapSet,
    b: &RateMapSet,
) -> Result<Vec<Option<f64>>, MetricsError> {
    if a.width != b.width {
        return Err(MetricsError::WidthMismatch {
            a: a.width,
            b: b.width,
        });
    }
    if a.maps.len() != b.maps.len() {
        return Err(MetricsError::UnitCountMismatch {
            a: a.maps.len(),
            b: b.maps.len(),
        });
    }
    Ok(a.maps
        .iter()
        .zip(&b.maps)
        .map(|(ma, mb)| stats::pearson(&ma.values, &mb.values))
        .collect())
}

// ---------------------------------------------------------------------------
// Export and import

/// One row per vertex: id, coordinates, occupancy, then every unit.
/// Masked bins are empty fields.
pub fn rate_maps_to_csv(set: &RateMapSet) -> String {
    let mut out = String::from("vertex,row,col,occupancy");
    for u in 0..set.maps.len() {
        out.push_str(&format!(",u{u}"));
    }
    out.push('\n');
    for v in 0..set.width * set.width {
        let (r, c) = (v / set.width, v % set.width);
        out.push_str(&format!("{v},{r},{c},{}", set.occupancy[v]));
        for map in &set.maps {
            let val = map.values[v];
            if val.is_finite() {
                out.push_str(&format!(",{val}"));
            } else {
                out.push(',');
            }
        }
        out.push('\n');
    }
    out
}

/// Parse the schema written by `rate_maps_to_csv`; width is inferred from
/// the row count. Also accepts external maps in the same schema.
pub fn rate_maps_from_csv(text: &str) -> Result<(Vec<RateMap>, Vec<usize>), MetricsError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MetricsError::BadCsv("empty file".into()))?;
    let units = header.split(',').count().saturating_sub(4);
    let rows: Vec<&str> = lines.collect();
    let width = (rows.len() as f64).sqrt().round() as usize;
    if width * width != rows.len() || width == 0 {
        return Err(MetricsError::BadCsv(format!(
            "{} rows is not a square board",
            rows.len()
        )));
    }
    let mut maps = vec![RateMap::new(width); units];
    let mut occupancy = vec![0usize; rows.len()];
    for (v, row) in rows.iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != units + 4 {
            return Err(MetricsError::BadCsv(format!(
                "row {v} has {} fields, expected {}",
                fields.len(),
                units + 4
            )));
        }
        let id: usize = fields[0]
            .parse()
            .map_err(|_| MetricsError::BadCsv(format!("bad vertex id {:?}", fields[0])))?;
        if id != v {
            return Err(MetricsError::BadCsv(format!(
                "vertex ids must be dense, found {id} at row {v}"
            )));
        }
        occupancy[v] = fields[3]
            .parse()
            .map_err(|_| MetricsError::BadCsv(format!("bad occupancy {:?}", fields[3])))?;
        for (u, field) in fields[4..].iter().enumerate() {
            if !field.is_empty() {
                maps[u].values[v] = field
                    .parse()
                    .map_err(|_| MetricsError::BadCsv(format!("bad value {field:?}")))?;
            }
        }
    }
    Ok((maps, occupancy))
}

/// 8-bit grayscale PGM, min..max of the valid bins stretched to 0..255;
/// masked bins render black.
pub fn rate_map_to_pgm(map: &RateMap) -> String {
    let lo = map
        .values
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let hi = map.max_value().unwrap_or(0.0);
    let span = hi - lo;
    let mut out = format!("P2\n{} {}\n255\n", map.width, map.width);
    for r in 0..map.width {
        let row: Vec<String> = (0..map.width)
            .map(|c| {
                let v = map.at(r, c);
                if !v.is_finite() || span <= 0.0 {
                    "0".to_string()
                } else {
                    format!("{}", ((v - lo) / span * 255.0).round() as u8)
                }
            })
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}
