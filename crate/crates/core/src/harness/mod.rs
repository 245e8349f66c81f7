//! Experiment orchestration: run configuration, the training loop,
//! evaluation, metrics and trajectory files.

mod config;
mod io;
mod rollout;
mod train;

pub use config::{
    PredicateSpec, RunConfig, RunSection, ShieldConfig, TaskConfig, CONFIGURATIONS, DEFAULT_FORMULA,
};
pub use io::{
    read_metrics, read_trajectories, replay, write_trials, MetricsRow, MetricsWriter, ReplaySummary,
    TrajectoryWriter, TrialRow, METRICS_HEADER,
};
pub use rollout::{
    run_episode, Controller, Decision, EpisodeResult, EpisodeSettings, GreedyPolicy, ScriptedOracle,
    StochasticPolicy, Task, ZeroPolicy,
};
pub use train::{evaluate_controller, run_evaluation, run_training, EvalSummary, RunPaths, TrainingSummary, OUT_ENV};

use thiserror::Error;

use crate::agent::AgentError;
use crate::automaton::AutomatonError;
use crate::logic::LogicError;
use crate::shield::ShieldError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Logic(#[from] LogicError),
    #[error(transparent)]
    Automaton(#[from] AutomatonError),
    #[error(transparent)]
    Shield(#[from] ShieldError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("QP fallback rate {rate:.4} exceeds {limit} after iteration {iteration}: {detail}")]
    QpFailureRate {
        iteration: usize,
        rate: f64,
        limit: f64,
        detail: String,
    },
    #[error("checkpoint does not match the run: {0}")]
    CheckpointMismatch(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}
