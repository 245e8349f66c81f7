//! Unicycle world: one agent driven through an ε-offset reference point,
//! three goal regions, a diagonal safety channel along `y = x`, and two
//! obstacles on a patrol the agent cannot observe the law of.
//!
//! Predicates, rewards and barrier values are all evaluated at the
//! reference point `[x + ε cosθ, y + ε sinθ]`, whose velocity is fully
//! actuated.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::logic::{Bindings, Predicate};
use crate::shield::ControlAffine;

/// Observation layout: `[x, y, θ, g1x, g1y, g2x, g2y, g3x, g3y, o1x, o1y, o2x, o2y]`.
pub const OBS_DIM: usize = 13;
pub const ACTION_DIM: usize = 2;
pub const NUM_GOALS: usize = 3;
pub const NUM_OBSTACLES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObstacleConfig {
    /// Patrol centers in world coordinates.
    pub bases: [[f64; 2]; NUM_OBSTACLES],
    pub amplitude: f64,
    /// Angular frequency in rad/s.
    pub frequency: f64,
    pub phases: [f64; NUM_OBSTACLES],
}

impl Default for ObstacleConfig {
    fn default() -> Self {
        let on_axis = |u: f64| [u / 2f64.sqrt(), u / 2f64.sqrt()];
        Self {
            bases: [on_axis(-0.5), on_axis(1.0)],
            amplitude: 0.5,
            frequency: 0.6,
            phases: [0.0, PI],
        }
    }
}

/// Axis-aligned box in the channel frame: `along` runs with the channel
/// direction `(1, 1)/√2`, `lateral` across it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelBox {
    pub along: [f64; 2],
    pub lateral: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `w`: the channel is `|y - x| < w`.
    pub channel_half_width: f64,
    /// `η_g`
    pub goal_radius: f64,
    /// `ε`
    pub reference_offset: f64,
    pub dt: f64,
    pub collision_threshold: f64,
    pub obstacles: ObstacleConfig,
    pub goal_bounds: ChannelBox,
    pub start_bounds: ChannelBox,
    /// Maximum deviation of the initial heading from the channel direction.
    pub heading_jitter: f64,
    /// Extra distance kept between the start and every goal region.
    pub start_clearance: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            channel_half_width: 1.0,
            goal_radius: 0.3,
            reference_offset: 0.1,
            dt: 0.05,
            collision_threshold: 0.25,
            obstacles: ObstacleConfig::default(),
            goal_bounds: ChannelBox {
                along: [-1.5, 1.5],
                lateral: [-1.2, 1.2],
            },
            start_bounds: ChannelBox {
                along: [-2.5, -2.0],
                lateral: [-0.35, 0.35],
            },
            heading_jitter: 0.5,
            start_clearance: 0.2,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.reference_offset > 0.0) {
            return Err("reference_offset must be positive".into());
        }
        if !(self.dt > 0.0) {
            return Err("dt must be positive".into());
        }
        if !(self.channel_half_width > 0.0) || !(self.goal_radius > 0.0) {
            return Err("channel_half_width and goal_radius must be positive".into());
        }
        Ok(())
    }
}

fn channel_point(along: f64, lateral: f64) -> [f64; 2] {
    let r = 2f64.sqrt().recip();
    [r * (along - lateral), r * (along + lateral)]
}

pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t <= -PI {
        t += 2.0 * PI;
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    /// `[x, y, θ]` of the agent center.
    pub pose: [f64; 3],
    pub goals: [[f64; 2]; NUM_GOALS],
    pub obstacles: [[f64; 2]; NUM_OBSTACLES],
    pub time: f64,
}

impl WorldState {
    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(OBS_DIM);
        obs.extend_from_slice(&self.pose);
        for g in &self.goals {
            obs.extend_from_slice(g);
        }
        for o in &self.obstacles {
            obs.extend_from_slice(o);
        }
        obs
    }

    pub fn from_observation(obs: &[f64], time: f64) -> Option<Self> {
        if obs.len() != OBS_DIM {
            return None;
        }
        let pair = |i: usize| [obs[i], obs[i + 1]];
        Some(Self {
            pose: [obs[0], obs[1], obs[2]],
            goals: [pair(3), pair(5), pair(7)],
            obstacles: [pair(9), pair(11)],
            time,
        })
    }

    /// Reference point `[x_ε, y_ε]`.
    pub fn position(&self, cfg: &EnvConfig) -> [f64; 2] {
        let [x, y, th] = self.pose;
        [
            x + cfg.reference_offset * th.cos(),
            y + cfg.reference_offset * th.sin(),
        ]
    }
}

fn obstacle_positions(cfg: &ObstacleConfig, t: f64) -> [[f64; 2]; NUM_OBSTACLES] {
    let mut out = [[0.0; 2]; NUM_OBSTACLES];
    for (i, o) in out.iter_mut().enumerate() {
        let phase = cfg.frequency * t + cfg.phases[i];
        *o = [
            cfg.bases[i][0] + cfg.amplitude * phase.sin(),
            cfg.bases[i][1] + cfg.amplitude * phase.cos(),
        ];
    }
    out
}

/// Deterministic initial world for `seed`.
pub fn reset(seed: u64, cfg: &EnvConfig) -> WorldState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = |b: &ChannelBox| {
        let along = rng.random_range(b.along[0]..=b.along[1]);
        let lateral = rng.random_range(b.lateral[0]..=b.lateral[1]);
        channel_point(along, lateral)
    };
    let goals = [
        sample(&cfg.goal_bounds),
        sample(&cfg.goal_bounds),
        sample(&cfg.goal_bounds),
    ];
    let clearance = cfg.goal_radius + cfg.start_clearance + cfg.reference_offset;
    let mut start = sample(&cfg.start_bounds);
    for _ in 0..1000 {
        let clear = goals
            .iter()
            .all(|g| ((g[0] - start[0]).powi(2) + (g[1] - start[1]).powi(2)).sqrt() > clearance);
        if clear {
            break;
        }
        start = sample(&cfg.start_bounds);
    }
    let heading = FRAC_PI_4 + rng.random_range(-cfg.heading_jitter..=cfg.heading_jitter);
    WorldState {
        pose: [start[0], start[1], wrap_angle(heading)],
        goals,
        obstacles: obstacle_positions(&cfg.obstacles, 0.0),
        time: 0.0,
    }
}

/// Reference-point dynamics `ṗ = f + g a` with `f = 0` and
/// `g = R(θ) diag(1, ε)`.
pub fn dynamics_fg(ws: &WorldState, cfg: &EnvConfig) -> ControlAffine {
    let th = ws.pose[2];
    let eps = cfg.reference_offset;
    ControlAffine {
        drift: DVector::zeros(2),
        input: DMatrix::from_row_slice(2, 2, &[th.cos(), -eps * th.sin(), th.sin(), eps * th.cos()]),
    }
}

/// Explicit Euler step of the unicycle center; obstacles follow their patrol.
pub fn env_step(ws: &WorldState, action: [f64; 2], cfg: &EnvConfig) -> WorldState {
    let [x, y, th] = ws.pose;
    let [v, w] = action;
    let dt = cfg.dt;
    let time = ws.time + dt;
    WorldState {
        pose: [x + dt * th.cos() * v, y + dt * th.sin() * v, wrap_angle(th + dt * w)],
        goals: ws.goals,
        obstacles: obstacle_positions(&cfg.obstacles, time),
        time,
    }
}

/// Channel constraints `c1: x - y + w > 0` and `c2: y - x + w > 0` over the
/// 2-D reference point.
pub fn channel_barriers(cfg: &EnvConfig) -> [Predicate; 2] {
    let w = cfg.channel_half_width;
    [
        Predicate::linear("c1", vec![1.0, -1.0], w).expect("valid channel predicate"),
        Predicate::linear("c2", vec![-1.0, 1.0], w).expect("valid channel predicate"),
    ]
}

pub fn goal_predicate(ws: &WorldState, index: usize, cfg: &EnvConfig) -> Predicate {
    Predicate::ball_inside(
        format!("g{}", index + 1),
        2,
        ws.goals[index].to_vec(),
        cfg.goal_radius,
    )
    .expect("valid goal predicate")
}

/// `g1..g3`, `c1`, `c2` bound to the current world.
pub fn default_bindings(ws: &WorldState, cfg: &EnvConfig) -> Bindings {
    let mut b = Bindings::new();
    for i in 0..NUM_GOALS {
        let p = goal_predicate(ws, i, cfg);
        b.insert(p.name().to_string(), p);
    }
    for c in channel_barriers(cfg) {
        b.insert(c.name().to_string(), c);
    }
    b
}

/// Minimum distance from the agent to any obstacle.
pub fn obstacle_reward(ws: &WorldState, cfg: &EnvConfig) -> f64 {
    let p = ws.position(cfg);
    ws.obstacles
        .iter()
        .map(|o| ((o[0] - p[0]).powi(2) + (o[1] - p[1]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}
