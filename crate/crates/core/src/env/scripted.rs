//! Scripted circle-drawing controllers and dataset generation.
//!
//! Each episode follows a plan: a circle (center, radius, orientation), a
//! commanded speed, and a turn-noise level. The controller steers by aiming
//! at a "carrot" point on the planned circle slightly ahead of the agent's
//! current angular position, which both tracks the circle and recovers from
//! perturbations (walls, noise). Plans either orbit the episode's start
//! point or first travel to a remote circle.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetHeader, GenVariant, Trajectory};
use crate::env::{self, EnvConfig, EnvState, POS_BOUND, SPEED_MAX, SPEED_MIN};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::seeding;

/// Orbit direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Clockwise,
    CounterClockwise,
}

/// A scripted episode: which circle to draw and how.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPlan {
    pub circle_center: [f32; 2],
    pub circle_radius: f32,
    pub orientation: Orientation,
    /// Commanded forward speed, within `[SPEED_MIN, SPEED_MAX]`.
    pub speed: f32,
    /// Standard deviation (radians) of Gaussian noise added to each turn
    /// command before encoding.
    pub turn_noise: f32,
    /// Head for the circle before orbiting it (used when the plan's circle
    /// is far from the start position).
    pub approach_first: bool,
}

/// Distance at which the approach phase hands over to orbiting.
const APPROACH_TOL: f32 = 1.0;

/// Controller state carried across steps of one rollout.
struct Controller {
    plan: ScriptedPlan,
    approaching: bool,
}

impl Controller {
    fn new(plan: ScriptedPlan) -> Controller {
        Controller {
            approaching: plan.approach_first,
            plan,
        }
    }

    /// Raw action for the current pose, with `noise` already drawn.
    fn act(&mut self, pose: [f32; 3], noise: f32) -> [f32; 2] {
        let [x, y, heading] = pose;
        let [cx, cy] = self.plan.circle_center;
        let (rx, ry) = (x - cx, y - cy);
        let dist = (rx * rx + ry * ry).sqrt();

        if self.approaching {
            // Aim at the nearest point of the circle until close.
            let phi = if dist > 1e-6 { ry.atan2(rx) } else { 0.0 };
            let nearest = [
                cx + self.plan.circle_radius * phi.cos(),
                cy + self.plan.circle_radius * phi.sin(),
            ];
            let (dx, dy) = (nearest[0] - x, nearest[1] - y);
            if (dx * dx + dy * dy).sqrt() > APPROACH_TOL {
                let desired = dy.atan2(dx);
                return self.encode(desired - heading, noise);
            }
            self.approaching = false;
        }

        // Orbit: aim at a point on the circle one step-arc ahead of our
        // current angular position.
        let phi = if dist > 1e-6 { ry.atan2(rx) } else { heading };
        let lookahead = (self.plan.speed / self.plan.circle_radius).min(std::f32::consts::FRAC_PI_2);
        let phi_next = match self.plan.orientation {
            Orientation::CounterClockwise => phi + lookahead,
            Orientation::Clockwise => phi - lookahead,
        };
        let carrot = [
            cx + self.plan.circle_radius * phi_next.cos(),
            cy + self.plan.circle_radius * phi_next.sin(),
        ];
        let desired = (carrot[1] - y).atan2(carrot[0] - x);
        self.encode(desired - heading, noise)
    }

    fn encode(&self, turn: f32, noise: f32) -> [f32; 2] {
        let turn = env::wrap_angle(turn) + noise;
        let raw_turn = (turn / std::f32::consts::PI).clamp(-1.0, 1.0);
        let raw_speed =
            ((self.plan.speed - SPEED_MIN) / (SPEED_MAX - SPEED_MIN) * 2.0 - 1.0).clamp(-1.0, 1.0);
        [raw_turn, raw_speed]
    }
}

fn validate_plan(plan: &ScriptedPlan) -> Result<()> {
    if !(plan.circle_radius > 0.0) {
        return Err(Error::invalid_argument(format!(
            "plan radius must be positive, got {}",
            plan.circle_radius
        )));
    }
    if !(SPEED_MIN..=SPEED_MAX).contains(&plan.speed) {
        return Err(Error::invalid_argument(format!(
            "plan speed {} outside [{SPEED_MIN}, {SPEED_MAX}]",
            plan.speed
        )));
    }
    if plan.turn_noise < 0.0 || !plan.turn_noise.is_finite() {
        return Err(Error::invalid_argument(format!(
            "turn noise must be a finite non-negative value, got {}",
            plan.turn_noise
        )));
    }
    Ok(())
}

/// Roll one scripted episode from a given start state to the horizon.
pub fn rollout_from(
    config: &EnvConfig,
    plan: &ScriptedPlan,
    start: EnvState,
    noise_rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    validate_plan(plan)?;
    config.validate()?;
    let mut controller = Controller::new(*plan);
    let t = config.horizon as usize;
    let mut triplets = Vec::with_capacity(t + 1);
    let mut actions = Vec::with_capacity(t);
    let mut rewards = Vec::with_capacity(t);
    let mut state = start;
    triplets.push(state.pose());
    loop {
        let noise = plan.turn_noise * noise_rng.sample::<f32, _>(StandardNormal);
        let action = controller.act(state.pose(), noise);
        let (next, reward, done) = env::step(config, &state, action)?;
        triplets.push(next.pose());
        actions.push(action);
        rewards.push(reward);
        state = next;
        if done {
            break;
        }
    }
    Ok(Trajectory {
        triplets,
        actions,
        rewards,
    })
}

/// Roll one scripted episode from a seeded random reset. The reset and the
/// noise stream are derived independently from `seed`, so a caller can
/// pre-sample the start state (to build a plan around it) and still get the
/// identical episode here.
pub fn rollout(config: &EnvConfig, plan: &ScriptedPlan, seed: u64) -> Result<Trajectory> {
    let start = env::reset(config, &mut seeding::rng_for(seed, "reset"))?;
    rollout_from(config, plan, start, &mut seeding::rng_for(seed, "turn-noise"))
}

/// Dataset generation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub env: EnvConfig,
    pub variant: GenVariant,
    pub n_episodes: usize,
    pub seed: u64,
}

/// Circle radii sampled by dataset plans.
pub const PLAN_RADIUS_MIN: f32 = 2.0;
pub const PLAN_RADIUS_MAX: f32 = 11.0;

/// Turn-noise bands sampled by dataset plans. Equal-weight mixture of a
/// near-clean band and two progressively noisier ones, so datasets exercise
/// the full range of trajectory-jitter styles.
pub const NOISE_BANDS: [[f32; 2]; 3] = [[0.0, 0.1], [0.2, 0.35], [0.4, 0.55]];

/// Sample the plan for episode `index`, returning it with the pre-sampled
/// start state (identical to the state `rollout` will reset to).
pub fn sample_plan(config: &GenConfig, index: u64) -> Result<(ScriptedPlan, EnvState)> {
    let episode_seed = seeding::derive_seed_indexed(config.seed, "episode", index);
    let start = env::reset(&config.env, &mut seeding::rng_for(episode_seed, "reset"))?;
    let mut rng = seeding::rng_for(episode_seed, "plan");
    let radius = rng.random_range(PLAN_RADIUS_MIN..PLAN_RADIUS_MAX);
    let orientation = if rng.random::<bool>() {
        Orientation::CounterClockwise
    } else {
        Orientation::Clockwise
    };
    let speed = rng.random_range(SPEED_MIN..SPEED_MAX);
    let band = NOISE_BANDS[rng.random_range(0..NOISE_BANDS.len())];
    let turn_noise = rng.random_range(band[0]..band[1]);
    let plan = match config.variant {
        GenVariant::Inplace => {
            // Circle through the start point: center one radius away in a
            // random direction.
            let alpha = rng.random_range(-std::f32::consts::PI..std::f32::consts::PI);
            let [x, y] = start.position();
            ScriptedPlan {
                circle_center: [x + radius * alpha.cos(), y + radius * alpha.sin()],
                circle_radius: radius,
                orientation,
                speed,
                turn_noise,
                approach_first: false,
            }
        }
        GenVariant::Navigate => {
            // Remote circle placed fully inside the walls.
            let margin = POS_BOUND - radius - 4.0;
            let cx = rng.random_range(-margin..margin);
            let cy = rng.random_range(-margin..margin);
            ScriptedPlan {
                circle_center: [cx, cy],
                circle_radius: radius,
                orientation,
                speed,
                turn_noise,
                approach_first: true,
            }
        }
    };
    Ok((plan, start))
}

fn episode_seed(config: &GenConfig, index: u64) -> u64 {
    seeding::derive_seed_indexed(config.seed, "episode", index)
}

/// Best return achievable by a clean scripted controller orbiting the task
/// target itself, starting on the circle. Used as the return-normalization
/// ceiling.
pub fn best_on_target_return(config: &EnvConfig) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    let target = config.target;
    for &speed in &[SPEED_MIN, 1.0, 1.75, 2.5, SPEED_MAX] {
        for orientation in [Orientation::CounterClockwise, Orientation::Clockwise] {
            let plan = ScriptedPlan {
                circle_center: target.center,
                circle_radius: target.radius,
                orientation,
                speed,
                turn_noise: 0.0,
                approach_first: false,
            };
            // Start on the circle, heading along the tangent.
            let pose = [
                target.center[0] + target.radius,
                target.center[1],
                match orientation {
                    Orientation::CounterClockwise => std::f32::consts::FRAC_PI_2,
                    Orientation::Clockwise => -std::f32::consts::FRAC_PI_2,
                },
            ];
            let mut rng = seeding::rng_for(0, "probe");
            let traj = rollout_from(config, &plan, EnvState::from_pose(pose), &mut rng)?;
            best = best.max(traj.episode_return());
        }
    }
    Ok(best)
}

/// Generate a dataset of scripted episodes. Episode `i` is fully determined
/// by `seed` and `i`, so generation parallelizes over episodes without
/// affecting the result.
pub fn generate_dataset(config: &GenConfig, mode: ExecMode) -> Result<Dataset> {
    if config.n_episodes == 0 {
        return Err(Error::invalid_argument("n_episodes must be positive"));
    }
    config.env.validate()?;
    let episodes = exec::try_map_indexed(mode, config.n_episodes, |i| {
        let (plan, _) = sample_plan(config, i as u64)?;
        rollout(&config.env, &plan, episode_seed(config, i as u64))
    })?;
    let return_lo = episodes
        .iter()
        .map(Trajectory::episode_return)
        .fold(f64::INFINITY, f64::min);
    let return_hi = best_on_target_return(&config.env)?;
    let ds = Dataset {
        header: DatasetHeader {
            env: config.env,
            variant: config.variant,
            n_episodes: config.n_episodes,
            horizon: config.env.horizon,
            seed: config.seed,
            return_lo,
            return_hi,
        },
        episodes,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_cfg(horizon: u32) -> EnvConfig {
        EnvConfig {
            horizon,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn clean_orbit_stays_on_circle() {
        let cfg = short_cfg(200);
        let plan = ScriptedPlan {
            circle_center: [10.0, -5.0],
            circle_radius: 5.0,
            orientation: Orientation::CounterClockwise,
            speed: 1.0,
            turn_noise: 0.0,
            approach_first: false,
        };
        let start = EnvState::from_pose([15.0, -5.0, std::f32::consts::FRAC_PI_2]);
        let mut rng = crate::seeding::rng_for(0, "test");
        let traj = rollout_from(&cfg, &plan, start, &mut rng).unwrap();
        for &[x, y, _] in &traj.triplets[5..] {
            let d = ((x - 10.0).powi(2) + (y + 5.0).powi(2)).sqrt();
            assert!((d - 5.0).abs() < 0.2, "radial error {}", (d - 5.0).abs());
        }
        // Counter-clockwise: signed area swept is positive.
        let mut area = 0.0f64;
        for w in traj.triplets.windows(2) {
            let ([x0, y0, _], [x1, y1, _]) = (w[0], w[1]);
            area += ((x0 - 10.0) as f64) * ((y1 + 5.0) as f64)
                - ((x1 - 10.0) as f64) * ((y0 + 5.0) as f64);
        }
        assert!(area > 0.0);
    }

    #[test]
    fn clockwise_orbit_reverses_sweep() {
        let cfg = short_cfg(100);
        let plan = ScriptedPlan {
            circle_center: [0.0, 0.0],
            circle_radius: 8.0,
            orientation: Orientation::Clockwise,
            speed: 2.0,
            turn_noise: 0.0,
            approach_first: false,
        };
        let start = EnvState::from_pose([8.0, 0.0, -std::f32::consts::FRAC_PI_2]);
        let mut rng = crate::seeding::rng_for(1, "test");
        let traj = rollout_from(&cfg, &plan, start, &mut rng).unwrap();
        let mut area = 0.0f64;
        for w in traj.triplets.windows(2) {
            let ([x0, y0, _], [x1, y1, _]) = (w[0], w[1]);
            area += (x0 as f64) * (y1 as f64) - (x1 as f64) * (y0 as f64);
        }
        assert!(area < 0.0);
    }

    #[test]
    fn navigate_reaches_remote_circle() {
        let cfg = short_cfg(400);
        let plan = ScriptedPlan {
            circle_center: [-20.0, 20.0],
            circle_radius: 6.0,
            orientation: Orientation::CounterClockwise,
            speed: 2.5,
            turn_noise: 0.0,
            approach_first: true,
        };
        let start = EnvState::from_pose([30.0, -30.0, 0.0]);
        let mut rng = crate::seeding::rng_for(2, "test");
        let traj = rollout_from(&cfg, &plan, start, &mut rng).unwrap();
        let [x, y, _] = traj.triplets[399];
        let d = ((x + 20.0).powi(2) + (y - 20.0).powi(2)).sqrt();
        assert!((d - 6.0).abs() < 0.3, "ended at radial distance {d}");
    }

    #[test]
    fn commanded_speed_shows_up_in_step_lengths() {
        let cfg = short_cfg(100);
        let plan = ScriptedPlan {
            circle_center: [0.0, 0.0],
            circle_radius: 9.0,
            orientation: Orientation::CounterClockwise,
            speed: 1.6,
            turn_noise: 0.0,
            approach_first: false,
        };
        let start = EnvState::from_pose([9.0, 0.0, std::f32::consts::FRAC_PI_2]);
        let mut rng = crate::seeding::rng_for(3, "test");
        let traj = rollout_from(&cfg, &plan, start, &mut rng).unwrap();
        for w in traj.triplets[10..].windows(2) {
            let ([x0, y0, _], [x1, y1, _]) = (w[0], w[1]);
            let step = ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt();
            assert!((step - 1.6).abs() < 1e-3, "step length {step}");
        }
    }

    #[test]
    fn generation_is_seed_deterministic_and_mode_independent() {
        let gen = GenConfig {
            env: short_cfg(50),
            variant: GenVariant::Inplace,
            n_episodes: 8,
            seed: 123,
        };
        let a = generate_dataset(&gen, ExecMode::Sequential).unwrap();
        let b = generate_dataset(&gen, ExecMode::Parallel).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(
            &GenConfig {
                seed: 124,
                ..gen
            },
            ExecMode::Sequential,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn return_bounds_bracket_the_data() {
        let gen = GenConfig {
            env: short_cfg(100),
            variant: GenVariant::Navigate,
            n_episodes: 6,
            seed: 5,
        };
        let ds = generate_dataset(&gen, ExecMode::Sequential).unwrap();
        assert!(ds.header.return_lo < ds.header.return_hi);
        for ep in &ds.episodes {
            assert!(ep.episode_return() >= ds.header.return_lo - 1e-9);
        }
        // A clean on-target orbit is near the reward ceiling of 0.
        assert!(ds.header.return_hi > -0.1 * 100.0, "hi = {}", ds.header.return_hi);
    }

    #[test]
    fn plans_cover_the_sampling_ranges() {
        let gen = GenConfig {
            env: short_cfg(10),
            variant: GenVariant::Inplace,
            n_episodes: 300,
            seed: 9,
        };
        let mut speed_bins = [0usize; 3];
        let mut noise_bands = [0usize; 3];
        for i in 0..300u64 {
            let (plan, _) = sample_plan(&gen, i).unwrap();
            let s = ((plan.speed - SPEED_MIN) / (SPEED_MAX - SPEED_MIN) * 3.0) as usize;
            speed_bins[s.min(2)] += 1;
            for (b, band) in NOISE_BANDS.iter().enumerate() {
                if plan.turn_noise >= band[0] && plan.turn_noise < band[1] {
                    noise_bands[b] += 1;
                }
            }
            assert!(plan.circle_radius >= PLAN_RADIUS_MIN && plan.circle_radius < PLAN_RADIUS_MAX);
        }
        assert!(speed_bins.iter().all(|&c| c > 50), "{speed_bins:?}");
        assert!(noise_bands.iter().all(|&c| c > 50), "{noise_bands:?}");
    }
}
