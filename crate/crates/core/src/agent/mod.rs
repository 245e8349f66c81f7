//! PPO agent over the automaton-augmented observation.

mod mlp;
mod policy;
mod ppo;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mlp::{Mlp, MlpDocument, MlpGrad, Trace};
pub use policy::{gaussian_log_prob, GaussianPolicy, PolicyGrad, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{clip_grad_norm, gae, ppo_policy_loss, ppo_policy_loss_and_grad, value_loss_and_grad, Adam, PolicyBatch};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("input has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Observation entries are clipped to this many standard deviations.
    pub obs_clip: f64,
    /// Divide rewards by a running standard deviation of the discounted return.
    pub scale_rewards: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![300, 200, 100],
            init_log_std: -0.5,
            policy_lr: 3e-4,
            value_lr: 1e-3,
            clip: 0.2,
            epochs: 10,
            minibatch: 250,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.0,
            max_grad_norm: 0.5,
            obs_clip: 10.0,
            scale_rewards: true,
        }
    }
}

/// Running per-coordinate mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: f64,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
            count: 1e-4,
        }
    }

    /// Merge a batch of samples (parallel variance combination).
    pub fn update(&mut self, rows: &[Vec<f64>]) {
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        for j in 0..self.mean.len() {
            let bm = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let bv = rows.iter().map(|r| (r[j] - bm).powi(2)).sum::<f64>() / n;
            let total = self.count + n;
            let delta = bm - self.mean[j];
            let m2 = self.var[j] * self.count + bv * n + delta * delta * self.count * n / total;
            self.mean[j] += delta * n / total;
            self.var[j] = m2 / total;
        }
        self.count += n;
    }

    pub fn normalize(&self, x: &[f64], clip: f64) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(v, (m, s))| ((v - m) / (s + 1e-8).sqrt()).clamp(-clip, clip))
            .collect()
    }
}

/// One episode of experience. `inputs` are already normalized network inputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Episode {
    pub inputs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// Value after the last step; 0 when the episode terminated.
    pub bootstrap: f64,
}

/// Flattened batch of episodes with advantages and value targets.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub inputs: Array2<f64>,
    pub actions: Array2<f64>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn from_episodes(episodes: &[Episode], gamma: f64, lambda: f64) -> Self {
        let n: usize = episodes.iter().map(|e| e.rewards.len()).sum();
        let d = episodes.iter().find_map(|e| e.inputs.first()).map_or(0, Vec::len);
        let m = episodes.iter().find_map(|e| e.actions.first()).map_or(0, Vec::len);
        let mut inputs = Array2::zeros((n, d));
        let mut actions = Array2::zeros((n, m));
        let mut log_probs = Vec::with_capacity(n);
        let mut rewards = Vec::with_capacity(n);
        let mut advantages = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        let mut row = 0;
        for e in episodes {
            let mut values = e.values.clone();
            values.push(e.bootstrap);
            let adv = gae(&e.rewards, &values, gamma, lambda);
            for t in 0..e.rewards.len() {
                for (j, v) in e.inputs[t].iter().enumerate() {
                    inputs[(row, j)] = *v;
                }
                for (j, v) in e.actions[t].iter().enumerate() {
                    actions[(row, j)] = *v;
                }
                returns.push(adv[t] + e.values[t]);
                row += 1;
            }
            advantages.extend(adv);
            log_probs.extend_from_slice(&e.log_probs);
            rewards.extend_from_slice(&e.rewards);
        }
        Self {
            inputs,
            actions,
            log_probs,
            rewards,
            advantages,
            returns,
        }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub grad_norm: f64,
}

/// Policy, value function, observation normalizer and optimizer state.
#[derive(Debug, Clone)]
pub struct Agent {
    pub config: AgentConfig,
    pub obs_dim: usize,
    pub num_automaton_states: usize,
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub normalizer: RunningNorm,
    /// Statistics of the discounted return used to scale rewards.
    pub return_stats: RunningNorm,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub obs_dim: usize,
    pub num_automaton_states: usize,
    pub action_dim: usize,
    pub config: AgentConfig,
    pub policy: MlpDocument,
    pub log_std: Vec<f64>,
    pub value: MlpDocument,
    pub normalizer: RunningNorm,
    #[serde(default = "scalar_norm")]
    pub return_stats: RunningNorm,
}

fn scalar_norm() -> RunningNorm {
    RunningNorm::new(1)
}

impl Agent {
    pub fn new(obs_dim: usize, num_automaton_states: usize, action_dim: usize, config: AgentConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = obs_dim + num_automaton_states;
        let mut sizes = vec![input];
        sizes.extend(&config.hidden);
        let mut psizes = sizes.clone();
        psizes.push(action_dim);
        sizes.push(1);
        let policy = GaussianPolicy::new(&psizes, config.init_log_std, &mut rng);
        let value = Mlp::new(&sizes, 1.0, &mut rng);
        Self {
            policy_opt: Adam::new(policy.flat().len(), config.policy_lr),
            value_opt: Adam::new(value.num_params(), config.value_lr),
            config,
            obs_dim,
            num_automaton_states,
            policy,
            value,
            normalizer: RunningNorm::new(obs_dim),
            return_stats: scalar_norm(),
            rng,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.policy.action_dim()
    }

    /// Normalized observation followed by a one-hot automaton state.
    pub fn input(&self, obs: &[f64], q: usize) -> Result<Vec<f64>, AgentError> {
        if obs.len() != self.obs_dim {
            return Err(AgentError::DimensionMismatch {
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if q >= self.num_automaton_states {
            return Err(AgentError::DimensionMismatch {
                expected: self.num_automaton_states,
                got: q + 1,
            });
        }
        let mut x = self.normalizer.normalize(obs, self.config.obs_clip);
        x.extend((0..self.num_automaton_states).map(|i| if i == q { 1.0 } else { 0.0 }));
        Ok(x)
    }

    pub fn sample<R: Rng>(&self, input: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64), AgentError> {
        self.policy.sample(input, rng)
    }

    pub fn act_deterministic(&self, input: &[f64]) -> Result<Vec<f64>, AgentError> {
        self.policy.mean_action(input)
    }

    pub fn value_of(&self, input: &[f64]) -> Result<f64, AgentError> {
        if input.len() != self.value.input_dim() {
            return Err(AgentError::DimensionMismatch {
                expected: self.value.input_dim(),
                got: input.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let v = self.value.predict(x)[(0, 0)];
        if !v.is_finite() {
            return Err(AgentError::NonFinite("value".into()));
        }
        Ok(v)
    }

    /// Advantages and value targets for `episodes`. With `scale_rewards`
    /// the running return statistics are updated first and rewards are
    /// divided by the return standard deviation, so values live in the
    /// scaled units.
    pub fn prepare_batch(&mut self, episodes: &[Episode]) -> RolloutBatch {
        if !self.config.scale_rewards {
            return RolloutBatch::from_episodes(episodes, self.config.gamma, self.config.gae_lambda);
        }
        let mut running = Vec::new();
        for e in episodes {
            let mut acc = 0.0;
            for r in &e.rewards {
                acc = acc * self.config.gamma + r;
                running.push(vec![acc]);
            }
        }
        self.return_stats.update(&running);
        let scale = 1.0 / (self.return_stats.var[0] + 1e-8).sqrt();
        let scaled: Vec<Episode> = episodes
            .iter()
            .map(|e| Episode {
                rewards: e.rewards.iter().map(|r| r * scale).collect(),
                ..e.clone()
            })
            .collect();
        RolloutBatch::from_episodes(&scaled, self.config.gamma, self.config.gae_lambda)
    }

    /// PPO epochs over shuffled minibatches. A non-finite loss aborts the
    /// update, leaving the parameters from the last good minibatch.
    pub fn update(&mut self, batch: &RolloutBatch) -> Result<UpdateStats, AgentError> {
        let n = batch.len();
        if n == 0 {
            return Ok(UpdateStats::default());
        }
        let mean = batch.advantages.iter().sum::<f64>() / n as f64;
        let std = (batch.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let adv: Vec<f64> = batch.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

        let mb = self.config.minibatch.clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut stats = UpdateStats::default();
        let mut count = 0.0;
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(mb) {
                let inputs = batch.inputs.select(ndarray::Axis(0), chunk);
                let actions = batch.actions.select(ndarray::Axis(0), chunk);
                let old: Vec<f64> = chunk.iter().map(|&i| batch.log_probs[i]).collect();
                let a: Vec<f64> = chunk.iter().map(|&i| adv[i]).collect();
                let ret: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();
                let pb = PolicyBatch {
                    inputs: inputs.view(),
                    actions: actions.view(),
                    old_log_probs: &old,
                    advantages: &a,
                };
                let (pl, pg) = ppo_policy_loss_and_grad(&self.policy, &pb, self.config.clip, self.config.entropy_coef);
                let (vl, vg) = value_loss_and_grad(&self.value, inputs.view(), &ret);
                let mut pg = pg.flat();
                let mut vg = vg.flat();
                if !pl.is_finite() || !vl.is_finite() || pg.iter().chain(&vg).any(|v| !v.is_finite()) {
                    return Err(AgentError::NonFinite(format!(
                        "loss (policy {pl}, value {vl}) on a minibatch of {} samples",
                        chunk.len()
                    )));
                }
                stats.grad_norm += clip_grad_norm(&mut pg, self.config.max_grad_norm);
                clip_grad_norm(&mut vg, self.config.max_grad_norm);
                let mut p = self.policy.flat();
                self.policy_opt.step(&mut p, &pg);
                self.policy.set_flat(&p);
                let mut v = self.value.flat();
                self.value_opt.step(&mut v, &vg);
                self.value.set_flat(&v);
                stats.policy_loss += pl;
                stats.value_loss += vl;
                count += 1.0;
            }
        }
        stats.policy_loss /= count;
        stats.value_loss /= count;
        stats.grad_norm /= count;
        Ok(stats)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            obs_dim: self.obs_dim,
            num_automaton_states: self.num_automaton_states,
            action_dim: self.action_dim(),
            config: self.config.clone(),
            policy: self.policy.mean.to_document(),
            log_std: self.policy.log_std.to_vec(),
            value: self.value.to_document(),
            normalizer: self.normalizer.clone(),
            return_stats: self.return_stats.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(c: &Checkpoint, seed: u64) -> Result<Self, AgentError> {
        if c.version != CHECKPOINT_VERSION {
            return Err(AgentError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        let mean = Mlp::from_document(&c.policy).map_err(AgentError::Checkpoint)?;
        let value = Mlp::from_document(&c.value).map_err(AgentError::Checkpoint)?;
        let input = c.obs_dim + c.num_automaton_states;
        if mean.input_dim() != input || value.input_dim() != input {
            return Err(AgentError::Checkpoint("network input size does not match the observation".into()));
        }
        if mean.output_dim() != c.action_dim || c.log_std.len() != c.action_dim || value.output_dim() != 1 {
            return Err(AgentError::Checkpoint("network output size does not match".into()));
        }
        if c.normalizer.mean.len() != c.obs_dim || c.normalizer.var.len() != c.obs_dim {
            return Err(AgentError::Checkpoint("normalizer size does not match".into()));
        }
        let policy = GaussianPolicy {
            mean,
            log_std: c.log_std.clone().into(),
        };
        Ok(Self {
            policy_opt: Adam::new(policy.flat().len(), c.config.policy_lr),
            value_opt: Adam::new(value.num_params(), c.config.value_lr),
            config: c.config.clone(),
            obs_dim: c.obs_dim,
            num_automaton_states: c.num_automaton_states,
            policy,
            value,
            normalizer: c.normalizer.clone(),
            return_stats: c.return_stats.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn from_json(text: &str, seed: u64) -> Result<Self, AgentError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&c, seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> AgentConfig {
        AgentConfig {
            hidden: vec![8, 8],
            minibatch: 16,
            epochs: 2,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn normalizer_matches_batch_statistics() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64, 2.0 * i as f64 - 5.0]).collect();
        let mut n = RunningNorm::new(2);
        n.update(&rows[..30]);
        n.update(&rows[30..]);
        let m0 = 49.5;
        let v0 = (0..100).map(|i| (i as f64 - m0).powi(2)).sum::<f64>() / 100.0;
        assert!((n.mean[0] - m0).abs() < 1e-3);
        assert!((n.var[0] - v0).abs() / v0 < 1e-4);
        assert!((n.var[1] - 4.0 * v0).abs() / v0 < 1e-3);
    }

    #[test]
    fn input_layout() {
        let a = Agent::new(3, 4, 2, small_config(), 0);
        let x = a.input(&[0.0, 0.0, 0.0], 2).unwrap();
        assert_eq!(x, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(a.input(&[0.0; 3], 4).is_err());
        assert!(a.input(&[0.0; 2], 0).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let a = Agent::new(3, 4, 2, small_config(), 5);
        let b = Agent::from_json(&a.to_json(), 0).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.value, b.value);
        assert_eq!(a.normalizer, b.normalizer);
        let mut c = a.checkpoint();
        c.obs_dim = 4;
        assert!(Agent::from_checkpoint(&c, 0).is_err());
    }

    fn toy_batch(agent: &Agent, n: usize, seed: u64) -> RolloutBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ep = Episode::default();
        for t in 0..n {
            let obs = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0];
            let x = agent.input(&obs, t % 4).unwrap();
            let (a, lp) = agent.sample(&x, &mut rng).unwrap();
            ep.rewards.push(-(a[0] - 0.5).powi(2));
            ep.values.push(agent.value_of(&x).unwrap());
            ep.inputs.push(x);
            ep.actions.push(a);
            ep.log_probs.push(lp);
        }
        RolloutBatch::from_episodes(&[ep], 0.9, 0.95)
    }

    #[test]
    fn update_is_deterministic() {
        let mut a = Agent::new(3, 4, 2, small_config(), 11);
        let mut b = a.clone();
        let batch = toy_batch(&a, 64, 1);
        a.update(&batch).unwrap();
        b.update(&batch).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.value, b.value);
    }

    #[test]
    fn zero_advantages_leave_the_policy_mean_unchanged() {
        let mut a = Agent::new(3, 4, 2, small_config(), 11);
        let mut batch = toy_batch(&a, 32, 2);
        batch.advantages.iter_mut().for_each(|v| *v = 0.0);
        let before = a.policy.clone();
        a.update(&batch).unwrap();
        assert_eq!(a.policy, before);
    }
}
