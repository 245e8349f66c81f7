use ndarray::{Array1, Array2, ArrayView2};

use super::mlp::{Mlp, MlpGrad};
use super::policy::{GaussianPolicy, PolicyGrad, LOG_STD_MAX, LOG_STD_MIN};

/// Generalized advantage estimates. `values` has one more entry than
/// `rewards`: the bootstrap value after the last step (0 at termination).
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(values.len(), rewards.len() + 1, "values need a bootstrap entry");
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// One minibatch of policy data.
#[derive(Debug, Clone, Copy)]
pub struct PolicyBatch<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
}

/// Clipped surrogate loss (to be minimized):
/// `-mean(min(r A, clip(r, 1-ε, 1+ε) A)) - c_H H`.
pub fn ppo_policy_loss(policy: &GaussianPolicy, batch: &PolicyBatch, clip: f64, entropy_coef: f64) -> f64 {
    let logp = policy.log_probs(batch.inputs, batch.actions);
    let n = logp.len() as f64;
    let surrogate: f64 = logp
        .iter()
        .zip(batch.old_log_probs)
        .zip(batch.advantages)
        .map(|((lp, old), a)| {
            let r = (lp - old).exp();
            (r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a)
        })
        .sum::<f64>()
        / n;
    -surrogate - entropy_coef * policy.entropy()
}

pub fn ppo_policy_loss_and_grad(
    policy: &GaussianPolicy,
    batch: &PolicyBatch,
    clip: f64,
    entropy_coef: f64,
) -> (f64, PolicyGrad) {
    let trace = policy.mean.forward(batch.inputs);
    let means = &trace.output;
    let ls = policy.clamped_log_std();
    let std: Vec<f64> = ls.iter().map(|v| v.exp()).collect();
    let b = means.nrows();
    let m = means.ncols();
    let n = b as f64;

    let mut d_mean = Array2::zeros((b, m));
    let mut d_log_std = Array1::zeros(m);
    let mut surrogate = 0.0;
    for i in 0..b {
        let mut lp = 0.0;
        for j in 0..m {
            let z = (batch.actions[(i, j)] - means[(i, j)]) / std[j];
            lp += -0.5 * z * z - ls[j] - 0.5 * (2.0 * std::f64::consts::PI).ln();
        }
        let a = batch.advantages[i];
        let r = (lp - batch.old_log_probs[i]).exp();
        let unclipped = r * a;
        let clipped = r.clamp(1.0 - clip, 1.0 + clip) * a;
        surrogate += unclipped.min(clipped);
        let inside = r > 1.0 - clip && r < 1.0 + clip;
        // d loss / d logp
        let g = if unclipped <= clipped || inside { -a * r / n } else { 0.0 };
        if g == 0.0 {
            continue;
        }
        for j in 0..m {
            let diff = batch.actions[(i, j)] - means[(i, j)];
            d_mean[(i, j)] = g * diff / (std[j] * std[j]);
            d_log_std[j] += g * (diff * diff / (std[j] * std[j]) - 1.0);
        }
    }
    let entropy: f64 = ls.iter().map(|v| v + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).sum();
    for j in 0..m {
        d_log_std[j] -= entropy_coef;
        let raw = policy.log_std[j];
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
            d_log_std[j] = 0.0;
        }
    }
    let net = policy.mean.backward(&trace, &d_mean);
    let loss = -surrogate / n - entropy_coef * entropy;
    (
        loss,
        PolicyGrad {
            net,
            log_std: d_log_std,
        },
    )
}

/// `½ mean((V(x) - R)²)` and its gradient.
pub fn value_loss_and_grad(net: &Mlp, inputs: ArrayView2<f64>, returns: &[f64]) -> (f64, MlpGrad) {
    let trace = net.forward(inputs);
    let b = returns.len();
    let n = b as f64;
    let mut d_out = Array2::zeros((b, 1));
    let mut loss = 0.0;
    for i in 0..b {
        let e = trace.output[(i, 0)] - returns[i];
        loss += 0.5 * e * e / n;
        d_out[(i, 0)] = e / n;
    }
    (loss, net.backward(&trace, &d_out))
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

/// Scale `g` in place so its Euclidean norm is at most `max_norm`.
pub fn clip_grad_norm(g: &mut [f64], max_norm: f64) -> f64 {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        g.iter_mut().for_each(|v| *v *= s);
    }
    norm
}
