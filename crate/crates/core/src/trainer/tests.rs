use proptest::prelude::*;

use super::*;
use crate::model::Hyperparams;

fn small_hp() -> Hyperparams {
    let mut hp = Hyperparams::default();
    hp.n_s = 6;
    hp.n_s_star = 4;
    hp.n_phase = vec![3, 2];
    hp.attractor.iters = 3;
    hp
}

fn small_params(seed: u64) -> ModelParams {
    ModelParams::init(small_hp(), seed)
}

fn small_cfg() -> TrainConfig {
    TrainConfig {
        window: 5,
        env_switch_interval: 20,
        total_updates: 30,
        widths: vec![4],
        shiny_count: 0,
        policy: WalkPolicy::default(),
        lr_start: 1e-3,
        lr_end: 1e-4,
        lr_decay_updates: 20,
        ramp_updates: 10,
        weights: LossWeights::default(),
        seed: 3,
        checkpoint_every: 0,
    }
}

#[test]
fn lr_schedule_hits_endpoints_and_never_increases() {
    let cfg = TrainConfig::default();
    assert!((lr_at(&cfg, 0) - 1e-3).abs() < 1e-12);
    assert!((lr_at(&cfg, 40_000) - 1e-4).abs() < 1e-12);
    assert!((lr_at(&cfg, 50_000) - 1e-4).abs() < 1e-12);
    // log-linear: halfway in updates is the geometric mean
    let mid = lr_at(&cfg, 20_000);
    assert!((mid - (1e-3f64 * 1e-4).sqrt()).abs() < 1e-12);
}

#[test]
fn ramp_is_exact_at_zero_midpoint_and_saturation() {
    assert_eq!(ramp_weight(0, 2000), 0.0);
    assert_eq!(ramp_weight(1000, 2000), 0.5);
    assert_eq!(ramp_weight(2000, 2000), 1.0);
    assert_eq!(ramp_weight(5000, 2000), 1.0);
    assert_eq!(ramp_weight(7, 0), 1.0);
}

proptest! {
    #[test]
    fn schedules_are_monotone(
        log_start in -4.0..-1.0f64,
        ratio in 0.01..1.0f64,
        decay in 1usize..10_000,
        ramp in 1usize..10_000,
    ) {
        let mut cfg = TrainConfig::default();
        cfg.lr_start = 10f64.powf(log_start);
        cfg.lr_end = cfg.lr_start * ratio;
        cfg.lr_decay_updates = decay;
        let probes: Vec<usize> = (0..50).map(|i| i * (decay / 25 + 1)).collect();
        for w in probes.windows(2) {
            prop_assert!(lr_at(&cfg, w[1]) <= lr_at(&cfg, w[0]) + 1e-18);
            prop_assert!(ramp_weight(w[1], ramp) >= ramp_weight(w[0], ramp));
        }
    }
}

#[test]
fn total_loss_follows_the_ramp_exactly() {
    let mut tape = Tape::new();
    let lv = LossVars {
        l_x: tape.scalar(2.0),
        l_next: tape.scalar(3.0),
        l_gpred: tape.scalar(5.0),
        l_p: tape.scalar(7.0),
        l_g: tape.scalar(11.0),
        l_mem: tape.scalar(13.0),
        l_reg: tape.scalar(17.0),
    };
    let w = LossWeights::default();

    // before the ramp starts only the prediction terms survive
    let t0 = compute_total_loss(&mut tape, &[lv], &w, 0, 2000);
    assert_eq!(tape.value_scalar(t0), 5.0);

    // midpoint: non-prediction terms at exactly half weight (reg off)
    let tm = compute_total_loss(&mut tape, &[lv], &w, 1000, 2000);
    assert_eq!(tape.value_scalar(tm), 5.0 + 0.5 * (5.0 + 7.0 + 11.0 + 13.0));

    // saturated ramp with every weight 1 is the plain sum
    let mut w1 = w;
    w1.reg = 1.0;
    let tf = compute_total_loss(&mut tape, &[lv], &w1, 2000, 2000);
    assert_eq!(tape.value_scalar(tf), 2.0 + 3.0 + 5.0 + 7.0 + 11.0 + 13.0 + 17.0);
}

#[test]
fn window_of_one_step_on_fresh_environment_is_finite() {
    let params = small_params(11);
    let env = generate_environment(4, params.hp.n_s, 0, 5).unwrap();
    let steps = walk(&env, 2, &WalkPolicy::default(), 9);
    let seen = seen_before_flags(&steps);
    let run = rollout_window(&env, &steps, &seen, None, &params).unwrap();
    assert_eq!(run.steps.len(), 1);
    let s = &run.steps[0];
    for l in [s.l_x, s.l_next, s.l_gpred, s.l_p, s.l_g, s.l_mem, s.l_reg] {
        assert!(l.is_finite() && l >= 0.0);
    }
}

#[test]
fn first_visit_steps_contribute_exactly_zero() {
    let params = small_params(13);
    let env = generate_environment(3, params.hp.n_s, 0, 2).unwrap();
    let steps = walk(&env, 31, &WalkPolicy::default(), 17);
    let seen = seen_before_flags(&steps);
    let run = rollout_window(&env, &steps, &seen, None, &params).unwrap();

    let masked = run.steps.iter().filter(|s| !s.trained_here).count();
    let trained = run.steps.len() - masked;
    assert!(masked > 0 && trained > 0, "walk should mix first visits and returns");

    for s in &run.steps {
        if s.trained_here {
            assert!(s.l_x > 0.0 && s.l_gpred > 0.0);
        } else {
            assert_eq!(s.l_x, 0.0);
            assert_eq!(s.l_gpred, 0.0);
        }
        if s.trained_next {
            assert!(s.l_next > 0.0);
        } else {
            assert_eq!(s.l_next, 0.0);
        }
    }
    let total: f64 = run.steps.iter().map(|s| s.l_x).sum();
    let trained_total: f64 = run
        .steps
        .iter()
        .filter(|s| s.trained_here)
        .map(|s| s.l_x)
        .sum();
    assert_eq!(total, trained_total);
}

#[test]
fn consecutive_windows_match_one_long_tape_forward() {
    let params = small_params(19);
    let env = generate_environment(4, params.hp.n_s, 0, 23).unwrap();
    let steps = walk(&env, 51, &WalkPolicy::default(), 29);
    let seen = seen_before_flags(&steps);

    let long = rollout_window(&env, &steps, &seen, None, &params).unwrap();
    let first = rollout_window(&env, &steps[..26], &seen[..26], None, &params).unwrap();
    let second =
        rollout_window(&env, &steps[25..], &seen[25..], Some(&first.snapshot), &params).unwrap();

    let split: Vec<&StepLoss> = first.steps.iter().chain(second.steps.iter()).collect();
    assert_eq!(long.steps.len(), split.len());
    for (a, b) in long.steps.iter().zip(split) {
        assert_eq!(a.l_x, b.l_x);
        assert_eq!(a.l_next, b.l_next);
        assert_eq!(a.l_gpred, b.l_gpred);
        assert_eq!(a.l_p, b.l_p);
        assert_eq!(a.l_g, b.l_g);
        assert_eq!(a.l_mem, b.l_mem);
        assert_eq!(a.l_reg, b.l_reg);
    }

    // truncation changes gradients: the split tapes cannot see across the
    // boundary, the long tape can
    let w = LossWeights::default();
    let grad_sums = |run: WindowRun| -> Vec<Vec<f64>> {
        let mut tape = run.tape;
        let total = compute_total_loss(&mut tape, &run.loss_vars, &w, 5000, 2000);
        let grads = tape.backward(total).unwrap();
        run.leaves
            .iter()
            .map(|&l| grads.get(l).map(|g| g.to_vec()).unwrap_or_default())
            .collect()
    };
    let gl = grad_sums(long);
    let g1 = grad_sums(first);
    let g2 = grad_sums(second);
    let mut max_diff = 0.0f64;
    for i in 0..gl.len() {
        let a = &gl[i];
        for j in 0..a.len() {
            let split_sum = g1[i].get(j).unwrap_or(&0.0) + g2[i].get(j).unwrap_or(&0.0);
            max_diff = max_diff.max((a[j] - split_sum).abs());
        }
    }
    assert!(max_diff > 1e-9, "truncation should cut some gradient paths");
}

#[test]
fn fixed_seed_reproduces_the_metric_log() {
    let cfg = small_cfg();
    let mut p1 = small_params(cfg.seed);
    let r1 = train(&mut p1, &cfg, None).unwrap();
    let mut p2 = small_params(cfg.seed);
    let r2 = train(&mut p2, &cfg, None).unwrap();
    assert_eq!(r1.rows.len(), r2.rows.len());
    assert_eq!(
        serde_json::to_string(&r1.rows).unwrap(),
        serde_json::to_string(&r2.rows).unwrap()
    );
    let mut a = Vec::new();
    p1.visit_mut(|_, t| a.push(t.clone()));
    let mut b = Vec::new();
    p2.visit_mut(|_, t| b.push(t.clone()));
    assert_eq!(a, b);
}

#[test]
fn memory_resets_track_environment_switches() {
    let mut cfg = small_cfg();
    cfg.window = 5;
    cfg.env_switch_interval = 10; // two windows per environment
    cfg.total_updates = 7;
    let mut params = small_params(1);
    let report = train(&mut params, &cfg, None).unwrap();
    assert_eq!(report.updates_done, 7);
    assert_eq!(report.envs_entered, 4);
    assert_eq!(report.memory_resets, report.envs_entered);
    let env_ids: Vec<usize> = report.rows.iter().map(|r| r.env_id).collect();
    assert_eq!(env_ids, vec![1, 1, 2, 2, 3, 3, 4]);
}

#[test]
fn divergence_monitor_requires_a_sustained_streak() {
    let mut m = DivergenceMonitor::new(10.0, 3);
    assert!(!m.record(1.0)); // sets the baseline
    assert!(!m.record(5.0));
    assert!(!m.record(11.0));
    assert!(!m.record(12.0));
    assert!(!m.record(9.0)); // streak resets
    assert!(!m.record(11.0));
    assert!(!m.record(12.0));
    assert!(m.record(13.0));
}

#[test]
fn config_validation_rejects_bad_settings() {
    let ok = TrainConfig::default();
    assert!(ok.validate().is_ok());
    let mut c = ok.clone();
    c.window = 0;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.env_switch_interval = 10;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.weights.p = -0.1;
    assert!(c.validate().is_err());
    let mut c = ok.clone();
    c.lr_end = 2e-3;
    assert!(c.validate().is_err());
    let mut c = ok;
    c.widths = vec![];
    assert!(c.validate().is_err());
}

#[test]
fn short_training_run_reduces_reconstruction_loss() {
    let mut cfg = TrainConfig::default();
    cfg.window = 25;
    cfg.env_switch_interval = 2500;
    cfg.total_updates = 500;
    cfg.widths = vec![8];
    cfg.lr_decay_updates = 500;
    cfg.lr_end = 3e-4;
    cfg.ramp_updates = 100;
    cfg.seed = 7;
    let mut params = small_params(cfg.seed);
    let report = train(&mut params, &cfg, None).unwrap();
    assert_eq!(report.rows.len(), 500);
    let mean = |rows: &[MetricRow]| rows.iter().map(|r| r.l_x).sum::<f64>() / rows.len() as f64;
    let early = mean(&report.rows[..100]);
    let late = mean(&report.rows[400..]);
    assert!(
        late < early,
        "reconstruction loss should fall: early {early:.4}, late {late:.4}"
    );
}
