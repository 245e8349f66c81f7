//! Product of the environment with the task automaton: augmented
//! transitions, the automaton-shaped reward and per-step records.

use serde::{Deserialize, Serialize};

use crate::automaton::{AutomatonError, Fsa, StateId};

/// MDP state paired with the automaton state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedState {
    pub s: Vec<f64>,
    pub q: StateId,
}

/// Reward shaping parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// `c_r`: weight of the trap-avoidance term.
    pub trap_weight: f64,
    /// Constant reward while sitting in a trap state (applied negated).
    pub trap_penalty: f64,
    /// `w`: weight of the environment reward.
    pub env_weight: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            trap_weight: 1.0,
            trap_penalty: 5.0,
            env_weight: 0.1,
        }
    }
}

/// Next automaton state after the MDP reaches `s_next` from automaton state `q`.
pub fn augmented_transition(fsa: &Fsa, q: StateId, s_next: &[f64]) -> Result<StateId, AutomatonError> {
    fsa.step(q, s_next)
}

/// Automaton reward for arriving at `s_next` while in `q`:
/// `min(ρ(progress), c_r ρ(¬trap))`, `0` in a final state and a constant
/// penalty in a trap state.
pub fn tl_reward(fsa: &Fsa, q: StateId, s_next: &[f64], cfg: &RewardConfig) -> Result<f64, AutomatonError> {
    if fsa.is_final(q) {
        return Ok(0.0);
    }
    if fsa.is_trap(q) {
        return Ok(-cfg.trap_penalty);
    }
    let values = fsa.atom_values(s_next)?;
    let progress = fsa.progress_robustness(q, &values);
    let safe = match fsa.trap_guard_dnf(q) {
        Some(g) => -g.robustness(&values),
        None => f64::INFINITY,
    };
    Ok(progress.min(cfg.trap_weight * safe))
}

pub fn combined_reward(r_tl: f64, r_env: f64, env_weight: f64) -> f64 {
    r_tl + env_weight * r_env
}

/// Status of the action filter on one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterStatus {
    /// No constraint or goal was active; the action passed through.
    Inactive,
    Optimal,
    /// Solved after dropping the Lyapunov row.
    RelaxedGoal,
    /// Minimum-violation fallback.
    LeastViolation,
}

/// One environment transition, serialized as a JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    /// Observation before the step.
    pub s: Vec<f64>,
    pub q: StateId,
    pub a_rl: Vec<f64>,
    pub a_cbf: Vec<f64>,
    pub a_clf: Vec<f64>,
    pub s_next: Vec<f64>,
    pub q_next: StateId,
    /// Automaton reward.
    pub r_tilde: f64,
    /// Environment reward.
    pub r: f64,
    /// Combined reward used for learning.
    pub reward: f64,
    /// Names of the barrier constraints in the filter, aligned with `h_values`.
    pub h_labels: Vec<String>,
    pub h_values: Vec<f64>,
    /// Channel predicate values at `s_next`.
    pub channel: Vec<f64>,
    pub qp_status: FilterStatus,
    pub delta: f64,
}

impl StepRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("step record serializes")
    }

    pub fn from_json_line(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line)
    }
}

/// `Σ_t γ^t reward_t`.
pub fn discounted_return(records: &[StepRecord], gamma: f64) -> f64 {
    records
        .iter()
        .rev()
        .fold(0.0, |acc, r| r.reward + gamma * acc)
}
