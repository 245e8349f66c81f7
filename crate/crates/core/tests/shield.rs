mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tlsafe::env::{channel_barriers, dynamics_fg, env_step, goal_predicate, reset, EnvConfig, WorldState};
use tlsafe::harness::{run_episode, EpisodeSettings, RunConfig, Task};
use tlsafe::product::{FilterStatus, RewardConfig};
use tlsafe::shield::{ActionBounds, BarrierFunction, FilterContext, FilterRegistry};

use common::*;

#[test]
fn barrier_gradients_match_finite_differences() {
    let env = EnvConfig::default();
    let ws = reset(4, &env);
    let mut barriers: Vec<BarrierFunction> = channel_barriers(&env)
        .into_iter()
        .map(|p| BarrierFunction::new(p.name().to_string(), p))
        .collect();
    for i in 0..3 {
        let g = goal_predicate(&ws, i, &env);
        barriers.push(BarrierFunction::new(format!("!g{}", i + 1), g.negated()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for b in &barriers {
        for _ in 0..200 {
            let s = [2.0 * normal(&mut rng), 2.0 * normal(&mut rng)];
            let (_, grad) = b.value_and_gradient(&s).unwrap();
            let fd = fd_gradient(&|x| b.value_and_gradient(x).unwrap().0, &s, 1e-6);
            assert!(relative_error(&grad, &fd) < 1e-5, "{}: {grad:?} vs {fd:?}", b.label);
        }
    }
}

#[test]
fn reference_point_velocity_matches_the_simulator() {
    let mut env = EnvConfig::default();
    env.dt = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let ws = WorldState {
            pose: [normal(&mut rng), normal(&mut rng), rng.random_range(-3.0..3.0)],
            ..reset(0, &env)
        };
        let a = [normal(&mut rng), normal(&mut rng)];
        let d = dynamics_fg(&ws, &env);
        let predicted: Vec<f64> = (0..2)
            .map(|i| d.drift[i] + d.input[(i, 0)] * a[0] + d.input[(i, 1)] * a[1])
            .collect();
        let (p0, p1) = (ws.position(&env), env_step(&ws, a, &env).position(&env));
        let observed = [(p1[0] - p0[0]) / env.dt, (p1[1] - p0[1]) / env.dt];
        assert!(relative_error(&predicted, &observed) < 1e-4, "{predicted:?} vs {observed:?}");
    }
}

fn settings(cfg: &RunConfig) -> EpisodeSettings {
    EpisodeSettings {
        episode: 0,
        horizon: cfg.run.horizon,
        stop_on_trap: false,
        stop_on_collision: false,
        record: false,
        rl_bounds: ActionBounds::symmetric(&cfg.run.rl_max),
        reward: RewardConfig::default(),
        gamma: cfg.agent.gamma,
    }
}

#[test]
fn barriers_keep_adversarial_runs_in_the_channel() {
    let cfg = RunConfig::default();
    let task = Task::new(&cfg.task, &cfg.env).unwrap();
    for configuration in ["rl+cbf", "rl+cbf+clf"] {
        let filter = FilterRegistry::with_defaults()
            .build(configuration, &cfg.shield.params())
            .unwrap();
        for seed in 0..15 {
            let mut policy = AdversarialPolicy::new(&cfg.env, [1.0, 2.0], seed);
            let ep = run_episode(&task, &cfg.env, filter.as_ref(), &mut policy, seed, &settings(&cfg)).unwrap();
            assert!(ep.min_c1.min(ep.min_c2) >= -1e-3, "{configuration} seed {seed}");
            assert!(!ep.trapped, "{configuration} seed {seed}");
            assert_eq!(ep.count(FilterStatus::LeastViolation), 0);
        }
    }
}

#[test]
fn without_barriers_the_same_runs_leave_the_channel() {
    let cfg = RunConfig::default();
    let task = Task::new(&cfg.task, &cfg.env).unwrap();
    let filter = FilterRegistry::with_defaults().build("rl", &cfg.shield.params()).unwrap();
    let left = (0..15)
        .filter(|&seed| {
            let mut policy = AdversarialPolicy::new(&cfg.env, [1.0, 2.0], seed);
            let ep = run_episode(&task, &cfg.env, filter.as_ref(), &mut policy, seed, &settings(&cfg)).unwrap();
            ep.min_c1.min(ep.min_c2) < 0.0
        })
        .count();
    assert!(left >= 10, "only {left} of 15 runs left the channel");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Corrections stay in their boxes and an accepted solve satisfies every
    /// barrier row at the commanded action.
    #[test]
    fn filtered_actions_respect_boxes_and_barriers(
        seed in 0u64..1000,
        along in -2.5f64..2.0,
        lateral in -0.69f64..0.69,
        heading in -3.1f64..3.1,
        v in -1.0f64..1.0,
        w in -2.0f64..2.0,
    ) {
        let cfg = RunConfig::default();
        let task = Task::new(&cfg.task, &cfg.env).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let ws = WorldState { pose: [r * (along - lateral), r * (along + lateral), heading], ..reset(seed, &cfg.env) };
        let (fsa, barriers) = task.instantiate(&ws, &cfg.env).unwrap();
        let p = ws.position(&cfg.env);
        let q = fsa.step(fsa.initial(), &p).unwrap();
        prop_assume!(!fsa.is_final(q) && !fsa.is_trap(q));
        let params = cfg.shield.params();
        let filter = FilterRegistry::with_defaults().build("rl+cbf+clf", &params).unwrap();
        let dynamics = dynamics_fg(&ws, &cfg.env);
        let out = filter.filter(&FilterContext { fsa: &fsa, q, s: &p, a_rl: &[v, w], dynamics: &dynamics, user_barriers: &barriers }).unwrap();
        for j in 0..2 {
            prop_assert!(out.a_cbf[j].abs() <= cfg.shield.cbf_max[j] + 1e-12);
            prop_assert!(out.a_clf[j].abs() <= cfg.shield.clf_max[j] + 1e-12);
        }
        if matches!(out.status, FilterStatus::Optimal | FilterStatus::RelaxedGoal) {
            let a = out.total();
            let pdot: Vec<f64> = (0..2).map(|i| dynamics.drift[i] + dynamics.input[(i, 0)] * a[0] + dynamics.input[(i, 1)] * a[1]).collect();
            for b in &barriers {
                let (h, g) = b.value_and_gradient(&p).unwrap();
                let hdot = g[0] * pdot[0] + g[1] * pdot[1];
                prop_assert!(hdot + params.barrier_gain * h >= -1e-6 * (1.0 + h.abs()), "{}: {} + {}", b.label, hdot, h);
            }
        }
    }
}
