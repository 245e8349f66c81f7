use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::Agent;
use crate::env::{ACTION_DIM, OBS_DIM};
use crate::product::FilterStatus;
use crate::shield::{ActionBounds, ActionFilter, FilterRegistry};

use super::io::{write_trials, MetricsRow, MetricsWriter, TrajectoryWriter, TrialRow};
use super::rollout::{run_episode, Controller, EpisodeSettings, GreedyPolicy, StochasticPolicy, Task};
use super::{HarnessError, RunConfig};

/// Environment variable overriding `run.out_dir`.
pub const OUT_ENV: &str = "TLSAFE_OUT";

/// Files written for one (configuration, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    /// `<root>/<configuration>/seed-<seed>`, with the root taken from
    /// `TLSAFE_OUT` when set.
    pub fn new(cfg: &RunConfig, seed: u64) -> Self {
        let root = std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| cfg.run.out_dir.clone());
        Self::under(&root, &cfg.run.configuration, seed)
    }

    pub fn under(root: &Path, configuration: &str, seed: u64) -> Self {
        Self {
            dir: root.join(configuration).join(format!("seed-{seed}")),
        }
    }

    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn trajectories(&self) -> PathBuf {
        self.dir.join("trajectories.jsonl")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn eval(&self) -> PathBuf {
        self.dir.join("eval.csv")
    }
}

#[derive(Debug, Clone)]
pub struct TrainingSummary {
    pub rows: Vec<MetricsRow>,
    pub agent: Agent,
    pub qp_steps: usize,
    pub fallback_steps: usize,
}

fn rl_bounds(cfg: &RunConfig) -> ActionBounds {
    ActionBounds::symmetric(&cfg.run.rl_max)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train one agent under `cfg.run.configuration`, writing metrics,
/// trajectories, the checkpoint and the effective config into `paths`.
pub fn run_training(cfg: &RunConfig, seed: u64, paths: &RunPaths) -> Result<TrainingSummary, HarnessError> {
    cfg.validate()?;
    let task = Task::new(&cfg.task, &cfg.env)?;
    let filter = FilterRegistry::with_defaults().build(&cfg.run.configuration, &cfg.shield.params())?;
    let mut agent = Agent::new(OBS_DIM, task.fsa().num_states(), ACTION_DIM, cfg.agent.clone(), seed);
    let mut seeds = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED));

    std::fs::create_dir_all(&paths.dir)?;
    std::fs::write(paths.config(), cfg.to_toml())?;
    let mut metrics = MetricsWriter::create(&paths.metrics())?;
    let mut trajectories = TrajectoryWriter::create(&paths.trajectories())?;

    let mut rows = Vec::with_capacity(cfg.run.iterations);
    let (mut qp_steps, mut fallback_steps) = (0usize, 0usize);
    for it in 0..cfg.run.iterations {
        let record = cfg.run.record_every > 0 && (it % cfg.run.record_every == 0 || it + 1 == cfg.run.iterations);
        let mut episodes = Vec::with_capacity(cfg.run.batch);
        let mut observations = Vec::new();
        let mut returns = Vec::with_capacity(cfg.run.batch);
        let mut row = MetricsRow {
            iteration: it,
            return_mean: 0.0,
            return_std: 0.0,
            min_c1: f64::INFINITY,
            min_c2: f64::INFINITY,
            min_obs_dist: f64::INFINITY,
            traps: 0,
            successes: 0,
        };
        for b in 0..cfg.run.batch {
            let world_seed: u64 = seeds.random();
            let mut policy = StochasticPolicy::new(&agent, seeds.random());
            let settings = EpisodeSettings {
                episode: it * cfg.run.batch + b,
                horizon: cfg.run.horizon,
                stop_on_trap: false,
                stop_on_collision: false,
                record,
                rl_bounds: rl_bounds(cfg),
                reward: cfg.reward,
                gamma: cfg.agent.gamma,
            };
            let ep = run_episode(&task, &cfg.env, filter.as_ref(), &mut policy, world_seed, &settings)?;
            row.min_c1 = row.min_c1.min(ep.min_c1);
            row.min_c2 = row.min_c2.min(ep.min_c2);
            row.min_obs_dist = row.min_obs_dist.min(ep.min_obs_dist);
            row.traps += ep.trapped as usize;
            row.successes += ep.success as usize;
            returns.push(ep.discounted_return);
            qp_steps += ep.steps - ep.count(FilterStatus::Inactive);
            fallback_steps += ep.count(FilterStatus::LeastViolation);
            if record {
                trajectories.write(&ep.records)?;
            }
            observations.extend(ep.observations);
            episodes.push(ep.experience);
        }
        (row.return_mean, row.return_std) = mean_std(&returns);
        metrics.write(&row)?;
        rows.push(row);

        if it > 0 && qp_steps > 0 {
            let rate = fallback_steps as f64 / qp_steps as f64;
            if rate > cfg.run.max_fallback_rate {
                return Err(HarnessError::QpFailureRate {
                    iteration: it,
                    rate,
                    limit: cfg.run.max_fallback_rate,
                    detail: format!("{fallback_steps} of {qp_steps} filtered steps used the least-violation fallback"),
                });
            }
        }

        let batch = agent.prepare_batch(&episodes);
        agent.update(&batch)?;
        agent.normalizer.update(&observations);
    }
    std::fs::write(paths.checkpoint(), agent.to_json())?;
    Ok(TrainingSummary {
        rows,
        agent,
        qp_steps,
        fallback_steps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub trials: Vec<TrialRow>,
    pub success_rate: f64,
}

/// Run `cfg.run.eval_trials` episodes of `controller` under `filter`.
/// Episodes end at the horizon, on task completion, on trap entry and on
/// collision.
pub fn evaluate_controller(
    cfg: &RunConfig,
    task: &Task,
    filter: &dyn ActionFilter,
    controller: &mut dyn Controller,
    seeds: &[u64],
) -> Result<EvalSummary, HarnessError> {
    let mut trials = Vec::with_capacity(seeds.len());
    for (i, &seed) in seeds.iter().enumerate() {
        let settings = EpisodeSettings {
            episode: i,
            horizon: cfg.run.horizon,
            stop_on_trap: true,
            stop_on_collision: true,
            record: false,
            rl_bounds: rl_bounds(cfg),
            reward: cfg.reward,
            gamma: cfg.agent.gamma,
        };
        let ep = run_episode(task, &cfg.env, filter, controller, seed, &settings)?;
        trials.push(TrialRow {
            trial: i,
            seed,
            success: ep.success,
            trapped: ep.trapped,
            collided: ep.collided,
            steps: ep.steps,
            final_q: ep.final_q,
            min_c1: ep.min_c1,
            min_c2: ep.min_c2,
        });
    }
    let success_rate = if trials.is_empty() {
        0.0
    } else {
        trials.iter().filter(|t| t.success).count() as f64 / trials.len() as f64
    };
    Ok(EvalSummary { trials, success_rate })
}

/// Evaluate a trained agent with barriers switched on regardless of the
/// training configuration. Writes per-trial outcomes when `out` is given.
pub fn run_evaluation(cfg: &RunConfig, agent: &Agent, out: Option<&Path>) -> Result<EvalSummary, HarnessError> {
    cfg.validate()?;
    let task = Task::new(&cfg.task, &cfg.env)?;
    let n_q = task.fsa().num_states();
    if agent.obs_dim != OBS_DIM || agent.num_automaton_states != n_q || agent.action_dim() != ACTION_DIM {
        return Err(HarnessError::CheckpointMismatch(format!(
            "checkpoint has obs {} / states {} / actions {}, run needs {OBS_DIM} / {n_q} / {ACTION_DIM}",
            agent.obs_dim,
            agent.num_automaton_states,
            agent.action_dim()
        )));
    }
    let filter = FilterRegistry::with_defaults().build_with_barriers(&cfg.run.configuration, &cfg.shield.params())?;
    let seeds: Vec<u64> = (0..cfg.run.eval_trials as u64).map(|i| cfg.run.eval_seed_offset + i).collect();
    let summary = evaluate_controller(cfg, &task, filter.as_ref(), &mut GreedyPolicy::new(agent), &seeds)?;
    if let Some(path) = out {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_trials(path, &summary.trials)?;
    }
    Ok(summary)
}
