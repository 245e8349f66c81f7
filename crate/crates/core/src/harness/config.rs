use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::AgentConfig;
use crate::env::{channel_barriers, goal_predicate, EnvConfig, WorldState, NUM_GOALS};
use crate::logic::{Bindings, Predicate};
use crate::product::RewardConfig;
use crate::shield::{ActionBounds, ShieldParams, DISJUNCT_RULES};

use super::HarnessError;

pub const CONFIGURATIONS: &[&str] = &["rl", "rl+cbf", "rl+clf", "rl+cbf+clf", "clf+cbf"];

pub const DEFAULT_FORMULA: &str = "(F g1 | F g2) & F g3 & (!g3 U (g1 | g2)) & ((c1 & c2) U g3)";

/// How a formula atom is evaluated over the 2-D reference point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PredicateSpec {
    /// Inside goal region `index` (0-based) of the current episode.
    Goal { index: usize },
    /// Channel wall constraint, `side` 1 or 2.
    Channel { side: usize },
    Linear { normal: Vec<f64>, offset: f64 },
    BallInside { center: Vec<f64>, radius: f64 },
    BallOutside { center: Vec<f64>, radius: f64 },
}

impl PredicateSpec {
    pub fn resolve(&self, name: &str, ws: &WorldState, env: &EnvConfig) -> Result<Predicate, HarnessError> {
        let p = match self {
            Self::Goal { index } => {
                if *index >= NUM_GOALS {
                    return Err(HarnessError::Config(format!("{name}: goal index {index} out of range")));
                }
                goal_predicate(ws, *index, env)
            }
            Self::Channel { side } => match side {
                1 | 2 => channel_barriers(env)[side - 1].clone(),
                _ => return Err(HarnessError::Config(format!("{name}: channel side must be 1 or 2"))),
            },
            Self::Linear { normal, offset } => Predicate::linear(name, normal.clone(), *offset)?,
            Self::BallInside { center, radius } => Predicate::ball_inside(name, 2, center.clone(), *radius)?,
            Self::BallOutside { center, radius } => Predicate::ball_outside(name, 2, center.clone(), *radius)?,
        };
        Ok(p.renamed(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub formula: String,
    pub predicates: BTreeMap<String, PredicateSpec>,
    /// Predicates enforced as barriers on every step, independent of the automaton.
    pub barriers: Vec<String>,
    pub state_cap: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let mut predicates = BTreeMap::new();
        for i in 0..NUM_GOALS {
            predicates.insert(format!("g{}", i + 1), PredicateSpec::Goal { index: i });
        }
        predicates.insert("c1".into(), PredicateSpec::Channel { side: 1 });
        predicates.insert("c2".into(), PredicateSpec::Channel { side: 2 });
        Self {
            formula: DEFAULT_FORMULA.into(),
            predicates,
            barriers: vec!["c1".into(), "c2".into()],
            state_cap: 256,
        }
    }
}

impl TaskConfig {
    pub fn bindings(&self, ws: &WorldState, env: &EnvConfig) -> Result<Bindings, HarnessError> {
        self.predicates
            .iter()
            .map(|(name, spec)| Ok((name.clone(), spec.resolve(name, ws, env)?)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShieldConfig {
    /// `α`
    pub barrier_gain: f64,
    /// `c₃`
    pub lyapunov_decay: f64,
    /// `K`
    pub relaxation_weight: f64,
    pub relaxation_regularization: f64,
    pub cbf_max: Vec<f64>,
    pub clf_max: Vec<f64>,
    pub disjunct_rule: String,
}

impl Default for ShieldConfig {
    fn default() -> Self {
        let p = ShieldParams::default();
        Self {
            barrier_gain: p.barrier_gain,
            lyapunov_decay: p.lyapunov_decay,
            relaxation_weight: p.relaxation_weight,
            relaxation_regularization: p.relaxation_regularization,
            cbf_max: p.cbf_bounds.upper.clone(),
            clf_max: p.clf_bounds.upper.clone(),
            disjunct_rule: p.disjunct_rule,
        }
    }
}

impl ShieldConfig {
    pub fn params(&self) -> ShieldParams {
        ShieldParams {
            barrier_gain: self.barrier_gain,
            lyapunov_decay: self.lyapunov_decay,
            relaxation_weight: self.relaxation_weight,
            relaxation_regularization: self.relaxation_regularization,
            cbf_bounds: ActionBounds::symmetric(&self.cbf_max),
            clf_bounds: ActionBounds::symmetric(&self.clf_max),
            disjunct_rule: self.disjunct_rule.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub configuration: String,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    pub horizon: usize,
    pub batch: usize,
    pub eval_trials: usize,
    /// Offset added to trial indices when seeding evaluation worlds.
    pub eval_seed_offset: u64,
    /// Sampled actions are clipped to `±rl_max` before filtering.
    pub rl_max: Vec<f64>,
    /// Trajectories are written every this many iterations (and on the last).
    pub record_every: usize,
    pub max_fallback_rate: f64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            configuration: "rl+cbf+clf".into(),
            seeds: vec![0, 1, 2],
            iterations: 200,
            horizon: 200,
            batch: 5,
            eval_trials: 20,
            eval_seed_offset: 1_000_000,
            rl_max: vec![1.0, 2.0],
            record_every: 50,
            max_fallback_rate: 0.01,
            out_dir: PathBuf::from("runs"),
        }
    }
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub env: EnvConfig,
    pub shield: ShieldConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !CONFIGURATIONS.contains(&self.run.configuration.as_str()) {
            return bad(format!(
                "unknown configuration {:?}; expected one of {CONFIGURATIONS:?}",
                self.run.configuration
            ));
        }
        if !DISJUNCT_RULES.contains(&self.shield.disjunct_rule.as_str()) {
            return bad(format!("unknown disjunct rule {:?}", self.shield.disjunct_rule));
        }
        self.env.validate().map_err(HarnessError::Config)?;
        for b in &self.task.barriers {
            if !self.task.predicates.contains_key(b) {
                return bad(format!("barrier {b:?} is not a bound predicate"));
            }
        }
        let r = &self.run;
        if r.horizon == 0 || r.batch == 0 {
            return bad("horizon and batch must be positive".into());
        }
        if r.rl_max.len() != 2 || self.shield.cbf_max.len() != 2 || self.shield.clf_max.len() != 2 {
            return bad("action bounds need two entries".into());
        }
        let positive = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x >= 0.0);
        if !positive(&r.rl_max) || !positive(&self.shield.cbf_max) || !positive(&self.shield.clf_max) {
            return bad("action bounds must be finite and nonnegative".into());
        }
        let a = &self.agent;
        if !(a.gamma > 0.0 && a.gamma <= 1.0 && a.gae_lambda > 0.0 && a.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]".into());
        }
        if a.hidden.is_empty() || a.epochs == 0 || a.minibatch == 0 {
            return bad("agent needs hidden layers, epochs and minibatch".into());
        }
        // parse with a throwaway world so unbound names fail early
        let ws = crate::env::reset(0, &self.env);
        let bindings = self.task.bindings(&ws, &self.env)?;
        crate::logic::parse_formula(&self.task.formula, &bindings)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let cfg = RunConfig::from_toml("[run]\nconfiguration = \"rl\"\niterations = 3\n").unwrap();
        assert_eq!(cfg.run.configuration, "rl");
        assert_eq!(cfg.run.iterations, 3);
        assert_eq!(cfg.task, TaskConfig::default());
    }

    #[test]
    fn rejects_bad_documents() {
        for doc in [
            "[run]\nconfiguration = \"cbf\"\n",
            "[run]\nbogus = 1\n",
            "[task]\nformula = \"F zz\"\n",
            "[task]\nbarriers = [\"zz\"]\n",
            "[shield]\ndisjunct_rule = \"median\"\n",
            "[task.predicates.g1]\nkind = \"goal\"\nindex = 7\n",
        ] {
            assert!(RunConfig::from_toml(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn custom_predicates() {
        let doc = r#"
[task]
formula = "F home & (safe U home)"
barriers = ["safe"]
[task.predicates.home]
kind = "ball-inside"
center = [1.0, 1.0]
radius = 0.5
[task.predicates.safe]
kind = "linear"
normal = [1.0, -1.0]
offset = 1.0
"#;
        let cfg = RunConfig::from_toml(doc).unwrap();
        let ws = crate::env::reset(0, &cfg.env);
        let b = cfg.task.bindings(&ws, &cfg.env).unwrap();
        assert_eq!(b["home"].value(&[1.0, 1.0]).unwrap(), 0.5);
        assert_eq!(b["safe"].name(), "safe");
    }
}
