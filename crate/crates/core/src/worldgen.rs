//! Square 4-connected graph environments and biased random walks over them.
//!
//! Every vertex carries a sensory identity drawn uniformly (with replacement)
//! from `n_s` classes, so identities repeat across the lattice. Walks never
//! sample invalid moves; the policy masks them instead of bouncing off walls.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorldGenError {
    #[error("width must be at least 2, got {0}")]
    WidthTooSmall(usize),
    #[error("need at least one stimulus class, got {0}")]
    NoStimulusClasses(usize),
    #[error("shiny count {count} must be below vertex count {vertices}")]
    TooManyShiny { count: usize, vertices: usize },
}

/// Movement signal; `Stay` is always valid.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stay,
}

pub const N_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Up,
        Action::Down,
        Action::Left,
        Action::Right,
        Action::Stay,
    ];

    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stay => 4,
        }
    }

    pub fn one_hot(self) -> [f64; N_ACTIONS] {
        let mut v = [0.0; N_ACTIONS];
        v[self.index()] = 1.0;
        v
    }

    /// (row, col) displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stay => (0, 0),
        }
    }
}

/// Square lattice with per-vertex stimulus identities and optional shiny
/// vertices. Adjacency is implicit 4-connectivity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Environment {
    pub width: usize,
    pub stimuli: Vec<u16>,
    pub shiny: Vec<usize>,
}

impl Environment {
    pub fn vertex_count(&self) -> usize {
        self.width * self.width
    }

    pub fn stimulus(&self, vertex: usize) -> u16 {
        self.stimuli[vertex]
    }

    pub fn coords(&self, vertex: usize) -> (usize, usize) {
        (vertex / self.width, vertex % self.width)
    }

    pub fn vertex_at(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.width && col < self.width);
        row * self.width + col
    }

    pub fn is_border(&self, vertex: usize) -> bool {
        let (r, c) = self.coords(vertex);
        r == 0 || c == 0 || r == self.width - 1 || c == self.width - 1
    }

    pub fn is_shiny(&self, vertex: usize) -> bool {
        self.shiny.contains(&vertex)
    }

    /// Applying `action` at `vertex`, or None if it leaves the lattice.
    pub fn step_from(&self, vertex: usize, action: Action) -> Option<usize> {
        let (r, c) = self.coords(vertex);
        let (dr, dc) = action.delta();
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.width as isize || nc >= self.width as isize {
            None
        } else {
            Some(self.vertex_at(nr as usize, nc as usize))
        }
    }

    /// Directional moves that stay on the lattice (excludes Stay).
    pub fn valid_moves(&self, vertex: usize) -> Vec<(Action, usize)> {
        Action::ALL[..4]
            .iter()
            .filter_map(|&a| self.step_from(vertex, a).map(|v| (a, v)))
            .collect()
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    fn nearest_shiny_distance(&self, vertex: usize) -> Option<usize> {
        self.shiny
            .iter()
            .map(|&s| self.manhattan(vertex, s))
            .min()
    }
}

/// One step of a walk. The observation is the one-hot of `stimulus`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Step {
    pub vertex: usize,
    pub action: Action,
    pub stimulus: u16,
}

/// Per-step action weighting. Directional weights start at 1 and pick up
/// multiplicative factors; `stay_prob` is resolved before the directional
/// draw.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct WalkPolicy {
    pub straight_bias: f64,
    pub border_bias: f64,
    pub shiny_bias: f64,
    pub stay_prob: f64,
}

impl Default for WalkPolicy {
    fn default() -> Self {
        WalkPolicy {
            straight_bias: 1.0,
            border_bias: 0.0,
            shiny_bias: 0.0,
            stay_prob: 0.1,
        }
    }
}

impl WalkPolicy {
    pub fn uniform() -> Self {
        WalkPolicy {
            straight_bias: 0.0,
            border_bias: 0.0,
            shiny_bias: 0.0,
            stay_prob: 0.1,
        }
    }
}

pub fn generate_environment(
    width: usize,
    n_s: usize,
    shiny_count: usize,
    seed: u64,
) -> Result<Environment, WorldGenError> {
    if width < 2 {
        return Err(WorldGenError::WidthTooSmall(width));
    }
    if n_s < 1 {
        return Err(WorldGenError::NoStimulusClasses(n_s));
    }
    let vertices = width * width;
    if shiny_count >= vertices {
        return Err(WorldGenError::TooManyShiny {
            count: shiny_count,
            vertices,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stimuli = (0..vertices)
        .map(|_| rng.random_range(0..n_s) as u16)
        .collect();
    let mut shiny: Vec<usize> = rand::seq::index::sample(&mut rng, vertices, shiny_count).into_vec();
    shiny.sort_unstable();
    Ok(Environment {
        width,
        stimuli,
        shiny,
    })
}

/// Weight table over valid directional moves, before normalisation.
/// Exposed so tests and demos can display the exact distribution.
pub fn action_weights(
    env: &Environment,
    vertex: usize,
    prev_action: Action,
    policy: &WalkPolicy,
) -> Vec<(Action, f64)> {
    let shiny_dist = env.nearest_shiny_distance(vertex);
    env.valid_moves(vertex)
        .into_iter()
        .map(|(a, target)| {
            let mut w = 1.0;
            if a == prev_action {
                w *= 1.0 + policy.straight_bias;
            }
            if env.is_border(target) {
                w *= 1.0 + policy.border_bias;
            }
            if let Some(d) = shiny_dist {
                if env.nearest_shiny_distance(target).unwrap() < d {
                    w *= 1.0 + policy.shiny_bias;
                }
            }
            (a, w)
        })
        .collect()
}

pub fn sample_action(
    env: &Environment,
    vertex: usize,
    prev_action: Action,
    policy: &WalkPolicy,
    rng: &mut impl Rng,
) -> Action {
    if policy.stay_prob > 0.0 && rng.random::<f64>() < policy.stay_prob {
        return Action::Stay;
    }
    let table = action_weights(env, vertex, prev_action, policy);
    debug_assert!(!table.is_empty(), "every vertex has at least two moves");
    let dist = WeightedIndex::new(table.iter().map(|(_, w)| *w)).expect("positive weights");
    table[dist.sample(rng)].0
}

/// Biased random walk of `length` steps. The first step is always a `Stay`
/// at a uniformly drawn start vertex.
pub fn walk(env: &Environment, length: usize, policy: &WalkPolicy, seed: u64) -> Vec<Step> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..env.vertex_count());
    walk_with_rng(env, start, length, policy, &mut rng)
}

/// Like `walk` but starting at a fixed vertex, so two walks in different
/// environments share their origin.
pub fn walk_from(
    env: &Environment,
    start: usize,
    length: usize,
    policy: &WalkPolicy,
    seed: u64,
) -> Vec<Step> {
    assert!(start < env.vertex_count(), "start vertex out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    walk_with_rng(env, start, length, policy, &mut rng)
}

fn walk_with_rng(
    env: &Environment,
    start: usize,
    length: usize,
    policy: &WalkPolicy,
    rng: &mut ChaCha8Rng,
) -> Vec<Step> {
    assert!(length >= 1, "walk length must be at least 1");
    let mut vertex = start;
    let mut steps = Vec::with_capacity(length);
    steps.push(Step {
        vertex,
        action: Action::Stay,
        stimulus: env.stimulus(vertex),
    });
    let mut prev = Action::Stay;
    for _ in 1..length {
        let action = sample_action(env, vertex, prev, policy, rng);
        if let Some(next) = env.step_from(vertex, action) {
            vertex = next;
        }
        steps.push(Step {
            vertex,
            action,
            stimulus: env.stimulus(vertex),
        });
        prev = action;
    }
    steps
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn environment_basics() {
        let env = generate_environment(8, 45, 0, 7).unwrap();
        assert_eq!(env.vertex_count(), 64);
        assert!(env.stimuli.iter().all(|&s| (s as usize) < 45));
        assert!(env.shiny.is_empty());
    }

    #[test]
    fn single_class_environment_is_constant() {
        let env = generate_environment(2, 1, 0, 3).unwrap();
        assert_eq!(env.stimuli, vec![0, 0, 0, 0]);
    }

    #[test]
    fn invalid_configs_error() {
        assert!(matches!(
            generate_environment(1, 45, 0, 0),
            Err(WorldGenError::WidthTooSmall(1))
        ));
        assert!(matches!(
            generate_environment(8, 0, 0, 0),
            Err(WorldGenError::NoStimulusClasses(0))
        ));
        assert!(matches!(
            generate_environment(2, 45, 4, 0),
            Err(WorldGenError::TooManyShiny { .. })
        ));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_environment(10, 45, 3, 42).unwrap();
        let b = generate_environment(10, 45, 3, 42).unwrap();
        assert_eq!(a.stimuli, b.stimuli);
        assert_eq!(a.shiny, b.shiny);
        let c = generate_environment(10, 45, 3, 43).unwrap();
        assert_ne!(a.stimuli, c.stimuli);
    }

    #[test]
    fn stimulus_histogram_matches_uniform_multinomial() {
        // 1000 regenerations of a width-10 board: 1e5 draws over 45 classes.
        let mut counts = [0u64; 45];
        for seed in 0..1000 {
            let env = generate_environment(10, 45, 0, seed).unwrap();
            for &s in &env.stimuli {
                counts[s as usize] += 1;
            }
        }
        let n: f64 = 100_000.0;
        let p: f64 = 1.0 / 45.0;
        let mean = n * p;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for (class, &c) in counts.iter().enumerate() {
            let dev = (c as f64 - mean).abs();
            assert!(
                dev < 4.0 * sigma,
                "class {class}: count {c} deviates {dev:.1} (> 4 sigma = {:.1})",
                4.0 * sigma
            );
        }
    }

    #[test]
    fn corner_vertex_has_two_moves() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        assert_eq!(env.valid_moves(0).len(), 2);
        let last = env.vertex_count() - 1;
        assert_eq!(env.valid_moves(last).len(), 2);
        // Interior vertex has all four.
        assert_eq!(env.valid_moves(env.vertex_at(4, 4)).len(), 4);
    }

    #[test]
    fn straight_bias_doubles_repeat_weight() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let policy = WalkPolicy {
            straight_bias: 1.0,
            border_bias: 0.0,
            shiny_bias: 0.0,
            stay_prob: 0.0,
        };
        let interior = env.vertex_at(4, 4);
        let table = action_weights(&env, interior, Action::Right, &policy);
        let w_of = |a: Action| table.iter().find(|(x, _)| *x == a).unwrap().1;
        assert_eq!(w_of(Action::Right), 2.0 * w_of(Action::Up));
        assert_eq!(w_of(Action::Up), w_of(Action::Down));
    }

    #[test]
    fn border_bias_weights_border_targets() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let policy = WalkPolicy {
            straight_bias: 0.0,
            border_bias: 3.0,
            shiny_bias: 0.0,
            stay_prob: 0.0,
        };
        // Vertex one step in from the left border: moving Left lands on the
        // border, moving Right does not.
        let v = env.vertex_at(4, 1);
        let table = action_weights(&env, v, Action::Stay, &policy);
        let w_of = |a: Action| table.iter().find(|(x, _)| *x == a).unwrap().1;
        assert_eq!(w_of(Action::Left), 4.0 * w_of(Action::Right));
    }

    #[test]
    fn shiny_bias_weights_distance_reducing_moves() {
        let mut env = generate_environment(8, 45, 0, 0).unwrap();
        env.shiny = vec![env.vertex_at(4, 7)];
        let policy = WalkPolicy {
            straight_bias: 0.0,
            border_bias: 0.0,
            shiny_bias: 2.0,
            stay_prob: 0.0,
        };
        let v = env.vertex_at(4, 4);
        let table = action_weights(&env, v, Action::Stay, &policy);
        let w_of = |a: Action| table.iter().find(|(x, _)| *x == a).unwrap().1;
        assert_eq!(w_of(Action::Right), 3.0 * w_of(Action::Left));
        assert_eq!(w_of(Action::Up), w_of(Action::Down));
    }

    #[test]
    fn unbiased_action_frequencies_are_uniform() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let policy = WalkPolicy {
            straight_bias: 0.0,
            border_bias: 0.0,
            shiny_bias: 0.0,
            stay_prob: 0.0,
        };
        let interior = env.vertex_at(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut counts = [0u32; 4];
        for _ in 0..n {
            let a = sample_action(&env, interior, Action::Stay, &policy, &mut rng);
            counts[a.index()] += 1;
        }
        let mean = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() < 3.0 * sigma,
                "action {i}: count {c} outside 3 sigma of {mean}"
            );
        }
    }

    #[test]
    fn long_walk_covers_board() {
        for seed in [1, 2, 3] {
            let env = generate_environment(10, 45, 0, seed).unwrap();
            let steps = walk(&env, 5000, &WalkPolicy::default(), seed);
            let mut visited = vec![false; env.vertex_count()];
            for s in &steps {
                visited[s.vertex] = true;
            }
            assert!(
                visited.iter().all(|&v| v),
                "seed {seed}: walk left vertices unvisited"
            );
        }
    }

    #[test]
    fn shiny_bias_raises_shiny_occupancy() {
        let env = generate_environment(8, 45, 2, 5).unwrap();
        let policy = WalkPolicy {
            straight_bias: 0.0,
            border_bias: 0.0,
            shiny_bias: 4.0,
            stay_prob: 0.1,
        };
        let steps = walk(&env, 20_000, &policy, 9);
        let mut occ = vec![0u32; env.vertex_count()];
        for s in &steps {
            occ[s.vertex] += 1;
        }
        let shiny_mean = env.shiny.iter().map(|&v| occ[v] as f64).sum::<f64>()
            / env.shiny.len() as f64;
        let rest: Vec<f64> = (0..env.vertex_count())
            .filter(|v| !env.is_shiny(*v))
            .map(|v| occ[v] as f64)
            .collect();
        let rest_mean = rest.iter().sum::<f64>() / rest.len() as f64;
        assert!(
            shiny_mean > rest_mean,
            "shiny occupancy {shiny_mean} not above rest {rest_mean}"
        );
    }

    #[test]
    fn stationary_occupancy_proportional_to_degree() {
        // Lazy unbiased walk mixes to pi(v) ~ degree(v). Thinning de-correlates
        // consecutive states so the chi-square multinomial assumption holds.
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let policy = WalkPolicy {
            straight_bias: 0.0,
            border_bias: 0.0,
            shiny_bias: 0.0,
            stay_prob: 0.1,
        };
        let steps = walk(&env, 1_000_000, &policy, 17);
        let thin = 101;
        let burn = 1000;
        let mut occ = vec![0u64; env.vertex_count()];
        let mut total = 0u64;
        let mut t = burn;
        while t < steps.len() {
            occ[steps[t].vertex] += 1;
            total += 1;
            t += thin;
        }
        let degrees: Vec<f64> = (0..env.vertex_count())
            .map(|v| env.valid_moves(v).len() as f64)
            .collect();
        let degree_sum: f64 = degrees.iter().sum();
        let mut stat = 0.0;
        for (v, &o) in occ.iter().enumerate() {
            let expected = total as f64 * degrees[v] / degree_sum;
            stat += (o as f64 - expected).powi(2) / expected;
        }
        let dof = (env.vertex_count() - 1) as f64;
        let chi = ChiSquared::new(dof).unwrap();
        let critical = chi.inverse_cdf(0.99);
        assert!(
            stat < critical,
            "chi-square stat {stat:.1} exceeds critical {critical:.1} at alpha=0.01"
        );
    }

    #[test]
    fn walk_of_length_one_is_a_stay() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let steps = walk(&env, 1, &WalkPolicy::default(), 4);
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].action, Action::Stay);
        assert_eq!(steps[0].stimulus, env.stimulus(steps[0].vertex));
    }

    #[test]
    fn fixed_start_walk_pins_the_origin_only() {
        let env = generate_environment(8, 45, 0, 0).unwrap();
        let steps = walk_from(&env, 17, 40, &WalkPolicy::default(), 9);
        assert_eq!(steps[0].vertex, 17);
        assert_eq!(steps[0].action, Action::Stay);
        let other = walk_from(&env, 17, 40, &WalkPolicy::default(), 10);
        assert_ne!(
            steps.iter().map(|s| s.vertex).collect::<Vec<_>>(),
            other.iter().map(|s| s.vertex).collect::<Vec<_>>(),
            "different seeds should wander differently"
        );
    }

    #[test]
    #[should_panic(expected = "start vertex out of range")]
    fn fixed_start_walk_rejects_bad_vertex() {
        let env = generate_environment(4, 45, 0, 0).unwrap();
        walk_from(&env, 16, 5, &WalkPolicy::default(), 0);
    }

    #[test]
    fn environment_json_round_trip() {
        let env = generate_environment(8, 45, 3, 21).unwrap();
        let json = serde_json::to_string(&env).unwrap();
        let back: Environment = serde_json::from_str(&json).unwrap();
        assert_eq!(back.width, env.width);
        assert_eq!(back.stimuli, env.stimuli);
        assert_eq!(back.shiny, env.shiny);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn prop_walks_are_valid_paths(
            seed in 0u64..1000,
            width in 2usize..13,
            length in 1usize..300,
            straight in 0.0f64..3.0,
            stay in 0.0f64..0.5,
        ) {
            let env = generate_environment(width, 45, 0, seed).unwrap();
            let policy = WalkPolicy {
                straight_bias: straight,
                border_bias: 0.0,
                shiny_bias: 0.0,
                stay_prob: stay,
            };
            let steps = walk(&env, length, &policy, seed.wrapping_add(1));
            prop_assert_eq!(steps.len(), length);
            for w in steps.windows(2) {
                prop_assert!(env.manhattan(w[0].vertex, w[1].vertex) <= 1);
            }
            for s in &steps {
                prop_assert_eq!(s.stimulus, env.stimulus(s.vertex));
            }
            let again = walk(&env, length, &policy, seed.wrapping_add(1));
            for (a, b) in steps.iter().zip(&again) {
                prop_assert_eq!(a.vertex, b.vertex);
                prop_assert_eq!(a.action, b.action);
            }
        }
    }
}
