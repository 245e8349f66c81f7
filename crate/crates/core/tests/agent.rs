mod common;

use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tlsafe::agent::{
    gaussian_log_prob, ppo_policy_loss, ppo_policy_loss_and_grad, value_loss_and_grad, Adam, Agent, AgentConfig,
    Episode, GaussianPolicy, Mlp, PolicyBatch, RolloutBatch,
};

use common::*;

/// 4-3-2 policy with unit-scale weights and a batch whose probability
/// ratios straddle both clip edges.
fn toy() -> (GaussianPolicy, Array2<f64>, Array2<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let policy = GaussianPolicy {
        mean: Mlp::new(&[4, 3, 2], 1.0, &mut rng),
        log_std: array![-0.3, 0.2],
    };
    let b = 12;
    let inputs = Array2::from_shape_fn((b, 4), |_| normal(&mut rng));
    let actions = Array2::from_shape_fn((b, 2), |_| normal(&mut rng));
    let means = policy.mean.predict(inputs.view());
    let ls = policy.log_std.to_vec();
    let shifts = [-0.5, -0.1, 0.0, 0.05, 0.1, 0.4];
    let old: Vec<f64> = (0..b)
        .map(|i| {
            let lp = gaussian_log_prob(&means.row(i).to_vec(), &ls, &actions.row(i).to_vec());
            lp + shifts[i % shifts.len()]
        })
        .collect();
    let adv: Vec<f64> = (0..b).map(|i| if i % 2 == 0 { 1.3 } else { -0.7 } * (1.0 + i as f64 / 4.0)).collect();
    (policy, inputs, actions, old, adv)
}

#[test]
fn ppo_loss_gradient_matches_finite_differences() {
    let (policy, inputs, actions, old, adv) = toy();
    for entropy_coef in [0.0, 0.01] {
        let batch = PolicyBatch {
            inputs: inputs.view(),
            actions: actions.view(),
            old_log_probs: &old,
            advantages: &adv,
        };
        let (loss, grad) = ppo_policy_loss_and_grad(&policy, &batch, 0.2, entropy_coef);
        assert!((loss - ppo_policy_loss(&policy, &batch, 0.2, entropy_coef)).abs() < 1e-12);
        let theta = policy.flat();
        let f = |x: &[f64]| {
            let mut p = policy.clone();
            p.set_flat(x);
            ppo_policy_loss(&p, &batch, 0.2, entropy_coef)
        };
        let fd = fd_gradient(&f, &theta, 1e-6);
        let err = relative_error(&grad.flat(), &fd);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn value_loss_gradient_matches_finite_differences() {
    let (_, inputs, ..) = toy();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let net = Mlp::new(&[4, 5, 1], 1.0, &mut rng);
    let returns: Vec<f64> = (0..inputs.nrows()).map(|_| normal(&mut rng)).collect();
    let (_, grad) = value_loss_and_grad(&net, inputs.view(), &returns);
    let f = |x: &[f64]| {
        let mut n = net.clone();
        n.set_flat(x);
        value_loss_and_grad(&n, inputs.view(), &returns).0
    };
    let fd = fd_gradient(&f, &net.flat(), 1e-6);
    assert!(relative_error(&grad.flat(), &fd) < 1e-4);
}

#[test]
fn value_regression_loss_decreases_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let mut net = Mlp::new(&[3, 16, 1], 1.0, &mut rng);
    let inputs = Array2::from_shape_fn((64, 3), |_| normal(&mut rng));
    let returns: Vec<f64> = inputs.rows().into_iter().map(|r| r[0] - 0.5 * r[1] * r[2] + 0.3).collect();
    let mut adam = Adam::new(net.num_params(), 1e-3);
    let mut losses = Vec::new();
    for _ in 0..50 {
        let (loss, grad) = value_loss_and_grad(&net, inputs.view(), &returns);
        losses.push(loss);
        let mut theta = net.flat();
        adam.step(&mut theta, &grad.flat());
        net.set_flat(&theta);
    }
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "{losses:?}");
    }
    assert!(losses[49] < 0.9 * losses[0]);
}

fn small_agent(seed: u64) -> Agent {
    let config = AgentConfig {
        hidden: vec![8, 8],
        minibatch: 16,
        epochs: 3,
        ..AgentConfig::default()
    };
    Agent::new(3, 2, 2, config, seed)
}

/// Reward is high when the first action coordinate is close to 1.
fn bandit_batch(agent: &mut Agent, rng: &mut ChaCha8Rng) -> RolloutBatch {
    let episodes: Vec<Episode> = (0..8)
        .map(|_| {
            let mut ep = Episode::default();
            for _ in 0..8 {
                let obs = [normal(rng), normal(rng), normal(rng)];
                let input = agent.input(&obs, 0).unwrap();
                let (a, lp) = agent.sample(&input, rng).unwrap();
                ep.values.push(agent.value_of(&input).unwrap());
                ep.rewards.push(-(a[0] - 1.0).powi(2));
                ep.inputs.push(input);
                ep.actions.push(a);
                ep.log_probs.push(lp);
            }
            ep
        })
        .collect();
    agent.prepare_batch(&episodes)
}

#[test]
fn policy_moves_toward_the_rewarded_action() {
    let mut agent = small_agent(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let probe = agent.input(&[0.0, 0.0, 0.0], 0).unwrap();
    let before = agent.act_deterministic(&probe).unwrap()[0];
    for _ in 0..40 {
        let batch = bandit_batch(&mut agent, &mut rng);
        agent.update(&batch).unwrap();
    }
    let after = agent.act_deterministic(&probe).unwrap()[0];
    assert!((after - 1.0).abs() < (before - 1.0).abs() - 0.3, "{before} -> {after}");
}

#[test]
fn checkpoints_restore_identical_behaviour() {
    let mut agent = small_agent(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = bandit_batch(&mut agent, &mut rng);
    agent.update(&batch).unwrap();
    let restored = Agent::from_json(&agent.to_json(), 3).unwrap();
    let input = agent.input(&[0.3, -0.2, 1.0], 1).unwrap();
    assert_eq!(restored.input(&[0.3, -0.2, 1.0], 1).unwrap(), input);
    assert_eq!(restored.act_deterministic(&input).unwrap(), agent.act_deterministic(&input).unwrap());
    assert_eq!(restored.value_of(&input).unwrap(), agent.value_of(&input).unwrap());
    assert!(Agent::from_json("{\"version\": 1}", 0).is_err());
}

proptest! {
    #[test]
    fn log_prob_matches_the_density(m in -2.0f64..2.0, ls in -2.0f64..1.0, a in -3.0f64..3.0) {
        let sigma = ls.exp();
        let density = (-(a - m).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        prop_assert!((gaussian_log_prob(&[m], &[ls], &[a]) - density.ln()).abs() < 1e-10);
    }
}
