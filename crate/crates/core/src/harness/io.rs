use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{env_step, EnvConfig, WorldState, NUM_GOALS, NUM_OBSTACLES};
use crate::product::StepRecord;

use super::HarnessError;

pub const METRICS_HEADER: [&str; 8] = [
    "iteration",
    "return_mean",
    "return_std",
    "min_c1",
    "min_c2",
    "min_obs_dist",
    "traps",
    "successes",
];

/// Per-iteration training metrics over the episode batch.
///
/// * `return_mean`, `return_std`: discounted return (population std)
/// * `min_c1`, `min_c2`: smallest channel constraint values reached
/// * `min_obs_dist`: smallest agent-obstacle distance
/// * `traps`: episodes that entered a trap state
/// * `successes`: episodes that reached a final state
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub min_c1: f64,
    pub min_c2: f64,
    pub min_obs_dist: f64,
    pub traps: usize,
    pub successes: usize,
}

/// CSV writer that emits the header on creation and flushes every row.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        inner.write_record(METRICS_HEADER)?;
        inner.flush()?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<(), HarnessError> {
        self.inner.serialize(row)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(HarnessError::Io(format!("unexpected metrics header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

/// Outcome of one evaluation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub success: bool,
    pub trapped: bool,
    pub collided: bool,
    pub steps: usize,
    pub final_q: usize,
    pub min_c1: f64,
    pub min_c2: f64,
}

pub fn write_trials(path: &Path, rows: &[TrialRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends step records as JSON lines.
pub struct TrajectoryWriter {
    inner: BufWriter<File>,
}

impl TrajectoryWriter {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        Ok(Self {
            inner: BufWriter::new(File::create(path)?),
        })
    }

    pub fn write(&mut self, records: &[StepRecord]) -> Result<(), HarnessError> {
        for r in records {
            writeln!(self.inner, "{}", r.to_json_line())?;
        }
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_trajectories(path: &Path) -> Result<Vec<StepRecord>, HarnessError> {
    let file = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(StepRecord::from_json_line(&line).map_err(|e| HarnessError::Io(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplaySummary {
    pub episodes: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub fallback_steps: usize,
}

/// Re-integrates every recorded transition from its recorded actions and
/// checks that the stored next pose is reproduced exactly and that
/// consecutive steps chain.
pub fn replay(records: &[StepRecord], env: &EnvConfig) -> Result<ReplaySummary, HarnessError> {
    let mut summary = ReplaySummary {
        episodes: 0,
        steps: 0,
        total_reward: 0.0,
        fallback_steps: 0,
    };
    let mut prev: Option<&StepRecord> = None;
    for r in records {
        if r.s.len() != 3 || r.s_next.len() != 3 || r.a_rl.len() != 2 {
            return Err(HarnessError::Replay(format!("episode {} step {}: bad dimensions", r.episode, r.t)));
        }
        let continues = prev.is_some_and(|p| p.episode == r.episode && p.t + 1 == r.t);
        if continues {
            let p = prev.expect("checked");
            if p.s_next != r.s || p.q_next != r.q {
                return Err(HarnessError::Replay(format!("episode {} step {}: chain broken", r.episode, r.t)));
            }
        } else {
            summary.episodes += 1;
        }
        let a: Vec<f64> = (0..2).map(|i| r.a_rl[i] + r.a_cbf[i] + r.a_clf[i]).collect();
        let ws = WorldState {
            pose: [r.s[0], r.s[1], r.s[2]],
            goals: [[0.0; 2]; NUM_GOALS],
            obstacles: [[0.0; 2]; NUM_OBSTACLES],
            time: 0.0,
        };
        let next = env_step(&ws, [a[0], a[1]], env);
        if next.pose.as_slice() != r.s_next.as_slice() {
            return Err(HarnessError::Replay(format!(
                "episode {} step {}: pose {:?} != recorded {:?}",
                r.episode, r.t, next.pose, r.s_next
            )));
        }
        summary.steps += 1;
        summary.total_reward += r.reward;
        if r.qp_status == crate::product::FilterStatus::LeastViolation {
            summary.fallback_steps += 1;
        }
        prev = Some(r);
    }
    Ok(summary)
}
