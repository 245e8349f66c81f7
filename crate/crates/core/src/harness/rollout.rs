use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, Episode};
use crate::automaton::{compile_with_cap, Fsa, StateId};
use crate::env::{
    channel_barriers, dynamics_fg, env_step, obstacle_reward, reset, EnvConfig, WorldState,
};
use crate::logic::parse_formula;
use crate::product::{combined_reward, tl_reward, FilterStatus, RewardConfig, StepRecord};
use crate::shield::{ActionBounds, ActionFilter, BarrierFunction, FilterContext};

use super::{HarnessError, TaskConfig};

/// The task automaton compiled once, rebound to each episode's world.
#[derive(Debug, Clone)]
pub struct Task {
    config: TaskConfig,
    template: Fsa,
}

impl Task {
    pub fn new(config: &TaskConfig, env: &EnvConfig) -> Result<Self, HarnessError> {
        let ws = reset(0, env);
        let bindings = config.bindings(&ws, env)?;
        let formula = parse_formula(&config.formula, &bindings)?;
        let template = compile_with_cap(&formula, config.state_cap)?;
        Ok(Self {
            config: config.clone(),
            template,
        })
    }

    pub fn fsa(&self) -> &Fsa {
        &self.template
    }

    /// Automaton and always-on barriers for the world `ws`.
    pub fn instantiate(&self, ws: &WorldState, env: &EnvConfig) -> Result<(Fsa, Vec<BarrierFunction>), HarnessError> {
        let bindings = self.config.bindings(ws, env)?;
        let fsa = self.template.rebind(&bindings)?;
        let barriers = self
            .config
            .barriers
            .iter()
            .map(|name| BarrierFunction::new(name.clone(), bindings[name].clone()))
            .collect();
        Ok((fsa, barriers))
    }
}

/// What a controller wants to do at one step, plus what PPO needs to learn from it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Decision {
    pub action: Vec<f64>,
    /// Network input (empty for controllers without one).
    pub input: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

pub trait Controller {
    fn name(&self) -> &str;
    /// Called at the start of every episode.
    fn reset(&mut self) {}
    fn decide(&mut self, ws: &WorldState, q: StateId, fsa: &Fsa) -> Result<Decision, HarnessError>;
    /// Value estimate used when an episode is cut off by the horizon.
    fn bootstrap(&self, _ws: &WorldState, _q: StateId) -> Result<f64, HarnessError> {
        Ok(0.0)
    }
}

/// Samples from the agent's Gaussian policy.
pub struct StochasticPolicy<'a> {
    agent: &'a Agent,
    rng: ChaCha8Rng,
}

impl<'a> StochasticPolicy<'a> {
    pub fn new(agent: &'a Agent, seed: u64) -> Self {
        Self {
            agent,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Controller for StochasticPolicy<'_> {
    fn name(&self) -> &str {
        "stochastic"
    }

    fn decide(&mut self, ws: &WorldState, q: StateId, _fsa: &Fsa) -> Result<Decision, HarnessError> {
        let input = self.agent.input(&ws.observation(), q)?;
        let (action, log_prob) = self.agent.sample(&input, &mut self.rng)?;
        let value = self.agent.value_of(&input)?;
        Ok(Decision {
            action,
            input,
            log_prob,
            value,
        })
    }

    fn bootstrap(&self, ws: &WorldState, q: StateId) -> Result<f64, HarnessError> {
        Ok(self.agent.value_of(&self.agent.input(&ws.observation(), q)?)?)
    }
}

/// The policy mean.
pub struct GreedyPolicy<'a> {
    agent: &'a Agent,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(agent: &'a Agent) -> Self {
        Self { agent }
    }
}

impl Controller for GreedyPolicy<'_> {
    fn name(&self) -> &str {
        "greedy"
    }

    fn decide(&mut self, ws: &WorldState, q: StateId, _fsa: &Fsa) -> Result<Decision, HarnessError> {
        let input = self.agent.input(&ws.observation(), q)?;
        let action = self.agent.act_deterministic(&input)?;
        Ok(Decision {
            action,
            input,
            ..Decision::default()
        })
    }
}

/// Never moves.
#[derive(Debug, Clone, Default)]
pub struct ZeroPolicy;

impl Controller for ZeroPolicy {
    fn name(&self) -> &str {
        "zero"
    }

    fn decide(&mut self, _ws: &WorldState, _q: StateId, _fsa: &Fsa) -> Result<Decision, HarnessError> {
        Ok(Decision {
            action: vec![0.0; 2],
            ..Decision::default()
        })
    }
}

/// Visits the nearer of the first two goals, then the third, while staying
/// inside the channel and clear of obstacles and of the third goal before
/// the first is reached.
///
/// Each step it rolls every action on a grid forward for `lookahead` steps
/// with the simulator itself (obstacle motion included), discards rollouts
/// that come within `clearance` of an obstacle, within `wall_margin` of a
/// channel wall or enter the third goal early, and keeps the one that gets
/// closest to the current target.
#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    pub env: EnvConfig,
    pub lookahead: usize,
    pub clearance: f64,
    pub wall_margin: f64,
    pub grid: usize,
    pub max_action: [f64; 2],
    first: Option<usize>,
    visited: bool,
}

impl ScriptedOracle {
    pub fn new(env: &EnvConfig) -> Self {
        Self {
            env: env.clone(),
            lookahead: 40,
            clearance: env.collision_threshold + 0.05,
            wall_margin: 0.05,
            grid: 9,
            max_action: [1.0, 2.0],
            first: None,
            visited: false,
        }
    }

    fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
    }

    /// `(feasible, score)` of holding `a` for the lookahead; lower scores are better.
    fn rollout(&self, ws: &WorldState, a: [f64; 2], target: [f64; 2], avoid: Option<[f64; 2]>) -> (bool, f64) {
        let channel = channel_barriers(&self.env);
        let mut w = ws.clone();
        let mut best = f64::INFINITY;
        let mut clearance = f64::INFINITY;
        let mut feasible = true;
        for _ in 0..self.lookahead {
            w = env_step(&w, a, &self.env);
            let p = w.position(&self.env);
            best = best.min(Self::dist(p, target));
            let obs = obstacle_reward(&w, &self.env);
            clearance = clearance.min(obs);
            let wall = channel
                .iter()
                .map(|c| c.value(&p).unwrap_or(f64::NEG_INFINITY))
                .fold(f64::INFINITY, f64::min);
            let early = avoid.is_some_and(|g| Self::dist(p, g) < self.env.goal_radius + self.wall_margin)
                && Self::dist(p, target) > 0.8 * self.env.goal_radius;
            if obs < self.clearance || wall < self.wall_margin || early {
                feasible = false;
            }
            if best < 0.5 * self.env.goal_radius {
                break;
            }
        }
        if feasible {
            (true, best)
        } else {
            (false, -clearance)
        }
    }
}

impl Controller for ScriptedOracle {
    fn name(&self) -> &str {
        "scripted-oracle"
    }

    fn reset(&mut self) {
        self.first = None;
        self.visited = false;
    }

    fn decide(&mut self, ws: &WorldState, _q: StateId, _fsa: &Fsa) -> Result<Decision, HarnessError> {
        let p = ws.position(&self.env);
        let first = *self.first.get_or_insert(
            if Self::dist(p, ws.goals[0]) <= Self::dist(p, ws.goals[1]) { 0 } else { 1 },
        );
        if Self::dist(p, ws.goals[first]) < 0.8 * self.env.goal_radius {
            self.visited = true;
        }
        let (target, avoid) = if self.visited {
            (ws.goals[2], None)
        } else {
            (ws.goals[first], Some(ws.goals[2]))
        };
        let n = self.grid.max(2);
        let mut best: Option<((bool, f64), [f64; 2])> = None;
        for i in 0..n {
            for j in 0..n {
                let frac = |k: usize| 2.0 * k as f64 / (n - 1) as f64 - 1.0;
                let a = [self.max_action[0] * frac(i), self.max_action[1] * frac(j)];
                let r = self.rollout(ws, a, target, avoid);
                let better = match best {
                    None => true,
                    Some(((f, s), _)) => (r.0 && !f) || (r.0 == f && r.1 < s),
                };
                if better {
                    best = Some((r, a));
                }
            }
        }
        let a = best.map(|(_, a)| a).unwrap_or([0.0; 2]);
        Ok(Decision {
            action: a.to_vec(),
            ..Decision::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSettings {
    pub episode: usize,
    pub horizon: usize,
    pub stop_on_trap: bool,
    pub stop_on_collision: bool,
    /// Keep per-step records.
    pub record: bool,
    /// Controller actions are clipped to these bounds before filtering.
    pub rl_bounds: ActionBounds,
    pub reward: RewardConfig,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub records: Vec<StepRecord>,
    pub experience: Episode,
    /// Raw observations at each decision.
    pub observations: Vec<Vec<f64>>,
    pub steps: usize,
    pub success: bool,
    pub trapped: bool,
    pub collided: bool,
    pub min_c1: f64,
    pub min_c2: f64,
    pub min_obs_dist: f64,
    pub discounted_return: f64,
    pub status_counts: [usize; 4],
    pub final_q: StateId,
    pub final_state: WorldState,
}

impl EpisodeResult {
    pub fn count(&self, status: FilterStatus) -> usize {
        self.status_counts[status_index(status)]
    }
}

fn status_index(s: FilterStatus) -> usize {
    match s {
        FilterStatus::Inactive => 0,
        FilterStatus::Optimal => 1,
        FilterStatus::RelaxedGoal => 2,
        FilterStatus::LeastViolation => 3,
    }
}

/// One episode of the product system from the world seeded by `seed`.
/// The automaton consumes the initial state before the first action.
pub fn run_episode(
    task: &Task,
    env: &EnvConfig,
    filter: &dyn ActionFilter,
    controller: &mut dyn Controller,
    seed: u64,
    settings: &EpisodeSettings,
) -> Result<EpisodeResult, HarnessError> {
    let mut ws = reset(seed, env);
    let (fsa, barriers) = task.instantiate(&ws, env)?;
    let channel = channel_barriers(env);
    controller.reset();

    let mut p = ws.position(env);
    let mut q = fsa.step(fsa.initial(), &p)?;
    let mut out = EpisodeResult {
        records: Vec::new(),
        experience: Episode::default(),
        observations: Vec::new(),
        steps: 0,
        success: false,
        trapped: fsa.is_trap(q),
        collided: false,
        min_c1: channel[0].value(&p)?,
        min_c2: channel[1].value(&p)?,
        min_obs_dist: obstacle_reward(&ws, env),
        discounted_return: 0.0,
        status_counts: [0; 4],
        final_q: q,
        final_state: ws.clone(),
    };
    out.collided = out.min_obs_dist < env.collision_threshold;
    let mut discount = 1.0;
    let mut truncated = true;

    for t in 0..settings.horizon {
        if fsa.is_final(q)
            || (settings.stop_on_trap && fsa.is_trap(q))
            || (settings.stop_on_collision && out.collided)
        {
            truncated = false;
            break;
        }
        let decision = controller.decide(&ws, q, &fsa)?;
        let a_rl = settings.rl_bounds.clamp(&decision.action);
        let dynamics = dynamics_fg(&ws, env);
        let filtered = filter.filter(&FilterContext {
            fsa: &fsa,
            q,
            s: &p,
            a_rl: &a_rl,
            dynamics: &dynamics,
            user_barriers: &barriers,
        })?;
        let a = filtered.total();
        let next = env_step(&ws, [a[0], a[1]], env);
        let p_next = next.position(env);
        let q_next = fsa.step(q, &p_next)?;
        let r_tilde = tl_reward(&fsa, q, &p_next, &settings.reward)?;
        let r = obstacle_reward(&next, env);
        let reward = combined_reward(r_tilde, r, settings.reward.env_weight);
        let c = [channel[0].value(&p_next)?, channel[1].value(&p_next)?];

        out.min_c1 = out.min_c1.min(c[0]);
        out.min_c2 = out.min_c2.min(c[1]);
        out.min_obs_dist = out.min_obs_dist.min(r);
        out.collided |= r < env.collision_threshold;
        out.trapped |= fsa.is_trap(q_next);
        out.status_counts[status_index(filtered.status)] += 1;
        out.discounted_return += discount * reward;
        discount *= settings.gamma;

        out.observations.push(ws.observation());
        let exp = &mut out.experience;
        exp.inputs.push(decision.input);
        exp.actions.push(decision.action);
        exp.log_probs.push(decision.log_prob);
        exp.values.push(decision.value);
        exp.rewards.push(reward);
        if settings.record {
            out.records.push(StepRecord {
                episode: settings.episode,
                t,
                s: ws.pose.to_vec(),
                q,
                a_rl: filtered.a_rl,
                a_cbf: filtered.a_cbf,
                a_clf: filtered.a_clf,
                s_next: next.pose.to_vec(),
                q_next,
                r_tilde,
                r,
                reward,
                h_labels: filtered.h_labels,
                h_values: filtered.h_values,
                channel: c.to_vec(),
                qp_status: filtered.status,
                delta: filtered.delta,
            });
        }
        out.steps += 1;
        ws = next;
        p = p_next;
        q = q_next;
    }
    if truncated && (fsa.is_final(q) || (settings.stop_on_trap && fsa.is_trap(q))) {
        truncated = false;
    }
    out.experience.bootstrap = if truncated && !fsa.is_final(q) {
        controller.bootstrap(&ws, q)?
    } else {
        0.0
    };
    out.success = fsa.is_final(q);
    out.final_q = q;
    out.final_state = ws;
    Ok(out)
}
