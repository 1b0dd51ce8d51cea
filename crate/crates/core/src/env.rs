//! The planar circle-drawing environment.
//!
//! An agent lives in a square arena and carries a heading. Each step it
//! first rotates by a commanded angle, then moves forward at a commanded
//! speed; motion is clamped to the arena walls. The observation is a short
//! history of pose triplets `(x, y, theta)` so that point-in-time styles
//! (speed, turning, curvature) are recoverable from a single observation.
//!
//! The task reward is highest on a target circle: by default the negative
//! distance between the agent's radial distance to the target center and
//! the target radius. Episodes end by truncation at a fixed horizon; there
//! is no terminal success state.

pub mod scripted;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the square arena; positions are clamped to `±POS_BOUND`.
pub const POS_BOUND: f32 = 50.0;
/// Reset positions are drawn uniformly from `±RESET_BOUND` on both axes.
pub const RESET_BOUND: f32 = 35.0;
/// Speed command range mapped from the second action channel.
pub const SPEED_MIN: f32 = 0.5;
pub const SPEED_MAX: f32 = 3.0;
/// Pose triplets kept in the observation history.
pub const HISTORY: usize = 4;
/// Observation width: `HISTORY` triplets.
pub const OBS_DIM: usize = HISTORY * 3;
/// Action channels: turn and speed.
pub const ACTION_DIM: usize = 2;
/// Default episode truncation horizon.
pub const DEFAULT_HORIZON: u32 = 1000;

/// The circle the task reward is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTarget {
    pub center: [f32; 2],
    pub radius: f32,
}

impl Default for TaskTarget {
    fn default() -> TaskTarget {
        TaskTarget {
            center: [0.0, 0.0],
            radius: 10.0,
        }
    }
}

/// Shape of the task reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-| ||p - c|| - R |`: negative absolute radial error. Bounded on the
    /// arena and scales linearly with distance from the target circle.
    #[default]
    Distance,
    /// `-( ||p - c|| - R )^2`: the squared radial error, negated.
    SquaredError,
}

/// Environment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub target: TaskTarget,
    pub reward_mode: RewardMode,
    pub horizon: u32,
}

impl Default for EnvConfig {
    fn default() -> EnvConfig {
        EnvConfig {
            target: TaskTarget::default(),
            reward_mode: RewardMode::default(),
            horizon: DEFAULT_HORIZON,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target.radius > 0.0) {
            return Err(Error::invalid_argument(format!(
                "target radius must be positive, got {}",
                self.target.radius
            )));
        }
        let [cx, cy] = self.target.center;
        if cx.abs() > POS_BOUND || cy.abs() > POS_BOUND || !cx.is_finite() || !cy.is_finite() {
            return Err(Error::invalid_argument(format!(
                "target center ({cx}, {cy}) outside the arena"
            )));
        }
        if self.horizon == 0 {
            return Err(Error::invalid_argument("horizon must be positive"));
        }
        Ok(())
    }
}

/// Wrap an angle into `[-pi, pi)`.
#[inline]
pub fn wrap_angle(theta: f32) -> f32 {
    use std::f32::consts::PI;
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can return exactly 2*pi for inputs just below -pi due to
    // rounding; fold that back.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Environment state: the pose history (oldest first) and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    history: [[f32; 3]; HISTORY],
    t: u32,
}

impl EnvState {
    /// Fresh state at a specific pose, history padded by repetition.
    pub fn from_pose(pose: [f32; 3]) -> EnvState {
        EnvState {
            history: [pose; HISTORY],
            t: 0,
        }
    }

    /// Current pose `(x, y, theta)`.
    pub fn pose(&self) -> [f32; 3] {
        self.history[HISTORY - 1]
    }

    pub fn position(&self) -> [f32; 2] {
        let [x, y, _] = self.pose();
        [x, y]
    }

    pub fn heading(&self) -> f32 {
        self.pose()[2]
    }

    pub fn step_count(&self) -> u32 {
        self.t
    }

    /// Flattened observation: `HISTORY` pose triplets, oldest first. Fresh
    /// episodes pad the history by repeating the initial pose.
    pub fn observation(&self) -> [f32; OBS_DIM] {
        let mut out = [0.0f32; OBS_DIM];
        for (i, triplet) in self.history.iter().enumerate() {
            out[i * 3..i * 3 + 3].copy_from_slice(triplet);
        }
        out
    }
}

/// Start a fresh episode: position uniform in `±RESET_BOUND`, heading
/// uniform in `[-pi, pi)`, history filled with the initial pose.
pub fn reset(config: &EnvConfig, rng: &mut ChaCha8Rng) -> Result<EnvState> {
    config.validate()?;
    let x = rng.random_range(-RESET_BOUND..RESET_BOUND);
    let y = rng.random_range(-RESET_BOUND..RESET_BOUND);
    let theta = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
    Ok(EnvState {
        history: [[x, y, theta]; HISTORY],
        t: 0,
    })
}

/// Map a raw action in `[-1, 1]^2` to `(turn, speed)`: the first channel
/// spans a full turn `[-pi, pi]` and the second spans
/// `[SPEED_MIN, SPEED_MAX]`. Raw values are clamped into the box first.
pub fn decode_action(raw: [f32; 2]) -> (f32, f32) {
    let a0 = raw[0].clamp(-1.0, 1.0);
    let a1 = raw[1].clamp(-1.0, 1.0);
    let turn = a0 * std::f32::consts::PI;
    let speed = SPEED_MIN + (a1 + 1.0) * 0.5 * (SPEED_MAX - SPEED_MIN);
    (turn, speed)
}

/// Task reward at a position.
pub fn task_reward(config: &EnvConfig, position: [f32; 2]) -> f32 {
    let dx = position[0] - config.target.center[0];
    let dy = position[1] - config.target.center[1];
    let radial_err = (dx * dx + dy * dy).sqrt() - config.target.radius;
    match config.reward_mode {
        RewardMode::Distance => -radial_err.abs(),
        RewardMode::SquaredError => -(radial_err * radial_err),
    }
}

/// Advance one step: rotate, then move, clamping to the walls. Returns the
/// new state, the reward at the post-move position, and whether the episode
/// just truncated at the horizon.
///
/// Raw actions may lie outside `[-1, 1]^2`; they are clamped by
/// [`decode_action`]. Stepping a finished episode is an invalid-state error.
pub fn step(config: &EnvConfig, state: &EnvState, raw_action: [f32; 2]) -> Result<(EnvState, f32, bool)> {
    if state.t >= config.horizon {
        return Err(Error::invalid_state(format!(
            "episode already truncated at t = {}",
            state.t
        )));
    }
    let [x, y, theta] = state.pose();
    let (turn, speed) = decode_action(raw_action);
    let new_theta = wrap_angle(theta + turn);
    let nx = (x + speed * new_theta.cos()).clamp(-POS_BOUND, POS_BOUND);
    let ny = (y + speed * new_theta.sin()).clamp(-POS_BOUND, POS_BOUND);
    let mut history = state.history;
    history.rotate_left(1);
    history[HISTORY - 1] = [nx, ny, new_theta];
    let next = EnvState {
        history,
        t: state.t + 1,
    };
    let reward = task_reward(config, [nx, ny]);
    let truncated = next.t >= config.horizon;
    Ok((next, reward, truncated))
}
