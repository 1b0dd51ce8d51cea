//! Programmatic style labeling.
//!
//! A style criterion maps every transition of a trajectory to a discrete
//! label by inspecting a window of poses around it: where the agent is, how
//! it moves, how sharply and in which direction it turns, how large a
//! circle it traces, and how jittery its heading is. Labels are computed
//! after the fact from poses alone, so the same functions annotate datasets
//! and grade evaluation rollouts.
//!
//! The module also owns label pollution (replacing a fraction of labels
//! with uniformly drawn wrong ones) and the style-sampling distributions
//! used to pick conditioning labels during training: the transition's own
//! label, a label drawn from the episode's future, or one drawn from the
//! dataset-wide label distribution.

pub mod circle_fit;

use std::path::Path;
use std::sync::Arc;

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Trajectory};
use crate::error::{Error, Result};
use crate::exec::{self, ExecMode};
use crate::io::{self, Container, NamedArray};
use crate::seeding;

/// Position grid: x spans `±POSITION_X_RANGE` in 4 bins, y splits at 0.
pub const POSITION_X_RANGE: f64 = 30.0;
/// Displacements shorter than this leave the movement direction undefined.
pub const MOVEMENT_MIN_DISP: f64 = 0.1;
/// Pose window half-width for turn direction and the straightness check.
pub const TURN_WINDOW_RADIUS: usize = 5;
/// Mean heading change (rad/step) below which motion counts as straight.
pub const TURN_THRESHOLD: f64 = 0.1;
/// Pose window half-width for the circle fit and heading-noise windows.
pub const FIT_WINDOW_RADIUS: usize = 25;
/// Fitted radii are bucketed over `[RADIUS_LO, RADIUS_HI]` in 3 bins.
pub const RADIUS_LO: f64 = 2.0;
pub const RADIUS_HI: f64 = 11.0;
/// Step speeds are bucketed over `[SPEED_LO, SPEED_HI]` in 3 bins.
pub const SPEED_LO: f64 = 0.5;
pub const SPEED_HI: f64 = 3.0;
/// Heading-noise deviations are bucketed over `[0, NOISE_HI]` in 3 bins.
pub const NOISE_HI: f64 = 0.8;

/// The six style criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionId {
    /// Arena octant of the current position: 4 x-bins times 2 y-halves.
    Position,
    /// Direction of the step displacement, 8 compass bins; label 8 means
    /// the step was too short to define a direction.
    MovementDirection,
    /// 0 = turning right, 1 = turning left, 2 = going straight.
    TurnDirection,
    /// Radius of the circle currently being traced, 3 bins; label 3 means
    /// not turning.
    RadiusCategory,
    /// Step speed, 3 bins.
    SpeedCategory,
    /// Jitter of the heading (deviation of its second differences), 3 bins.
    CurvatureNoise,
}

impl CriterionId {
    pub fn all() -> [CriterionId; 6] {
        [
            CriterionId::Position,
            CriterionId::MovementDirection,
            CriterionId::TurnDirection,
            CriterionId::RadiusCategory,
            CriterionId::SpeedCategory,
            CriterionId::CurvatureNoise,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            CriterionId::Position => "position",
            CriterionId::MovementDirection => "movement_direction",
            CriterionId::TurnDirection => "turn_direction",
            CriterionId::RadiusCategory => "radius_category",
            CriterionId::SpeedCategory => "speed_category",
            CriterionId::CurvatureNoise => "curvature_noise",
        }
    }

    /// Number of label classes, including any "undetermined" class.
    pub fn num_labels(self) -> usize {
        match self {
            CriterionId::Position => 8,
            CriterionId::MovementDirection => 9,
            CriterionId::TurnDirection => 3,
            CriterionId::RadiusCategory => 4,
            CriterionId::SpeedCategory => 3,
            CriterionId::CurvatureNoise => 3,
        }
    }

    /// Labels a policy can meaningfully be asked to produce. Excludes
    /// catch-all classes (undetermined direction, straight, not turning).
    pub fn promptable(self) -> &'static [u8] {
        match self {
            CriterionId::Position => &[0, 1, 2, 3, 4, 5, 6, 7],
            CriterionId::MovementDirection => &[0, 1, 2, 3, 4, 5, 6, 7],
            CriterionId::TurnDirection => &[0, 1],
            CriterionId::RadiusCategory => &[0, 1, 2],
            CriterionId::SpeedCategory => &[0, 1, 2],
            CriterionId::CurvatureNoise => &[0, 1, 2],
        }
    }

    /// Label for transition `t` of a trajectory (`0 <= t < traj.len()`).
    pub fn label_transition(self, traj: &Trajectory, t: usize) -> u8 {
        match self {
            CriterionId::Position => label_position(traj, t),
            CriterionId::MovementDirection => label_movement_direction(traj, t),
            CriterionId::TurnDirection => label_turn_direction(traj, t),
            CriterionId::RadiusCategory => label_radius_category(traj, t),
            CriterionId::SpeedCategory => label_speed_category(traj, t),
            CriterionId::CurvatureNoise => label_curvature_noise(traj, t),
        }
    }
}

impl std::str::FromStr for CriterionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<CriterionId> {
        CriterionId::all()
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                Error::invalid_argument(format!(
                    "unknown criterion '{s}'; expected one of {:?}",
                    CriterionId::all().map(|c| c.name())
                ))
            })
    }
}

/// Label every transition of a trajectory.
pub fn label_trajectory(criterion: CriterionId, traj: &Trajectory) -> Vec<u8> {
    (0..traj.len()).map(|t| criterion.label_transition(traj, t)).collect()
}

#[inline]
fn wrap64(theta: f64) -> f64 {
    use std::f64::consts::PI;
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Equal-width binning of `v` over `[lo, hi]` into `bins` bins, clamping
/// values outside the range into the end bins.
#[inline]
fn bin_clamped(v: f64, lo: f64, hi: f64, bins: usize) -> u8 {
    let w = (hi - lo) / bins as f64;
    let b = ((v - lo) / w).floor();
    (b.clamp(0.0, bins as f64 - 1.0)) as u8
}

fn label_position(traj: &Trajectory, t: usize) -> u8 {
    let [x, y] = traj.position(t);
    let xb = bin_clamped(x as f64, -POSITION_X_RANGE, POSITION_X_RANGE, 4);
    let yb = if (y as f64) < 0.0 { 0u8 } else { 1u8 };
    yb * 4 + xb
}

fn label_movement_direction(traj: &Trajectory, t: usize) -> u8 {
    let [x0, y0] = traj.position(t);
    let [x1, y1] = traj.position(t + 1);
    let (dx, dy) = ((x1 - x0) as f64, (y1 - y0) as f64);
    if (dx * dx + dy * dy).sqrt() < MOVEMENT_MIN_DISP {
        return 8;
    }
    let angle = wrap64(dy.atan2(dx));
    bin_clamped(angle, -std::f64::consts::PI, std::f64::consts::PI, 8)
}

/// Wrapped heading differences for pose indices `lo ..= hi` (diff `k` is
/// between poses `k` and `k+1`).
fn heading_diffs(traj: &Trajectory, lo: usize, hi: usize) -> Vec<f64> {
    (lo..=hi)
        .map(|k| wrap64(traj.triplets[k + 1][2] as f64 - traj.triplets[k][2] as f64))
        .collect()
}

/// Diff-index window for a pose window of half-width `radius` centered at
/// transition `t`.
fn diff_window(traj: &Trajectory, t: usize, radius: usize) -> (usize, usize) {
    let lo = t.saturating_sub(radius);
    let hi = (t + radius - 1).min(traj.len() - 1);
    (lo, hi)
}

fn mean_heading_change(traj: &Trajectory, t: usize) -> f64 {
    let (lo, hi) = diff_window(traj, t, TURN_WINDOW_RADIUS);
    let diffs = heading_diffs(traj, lo, hi);
    diffs.iter().sum::<f64>() / diffs.len() as f64
}

fn label_turn_direction(traj: &Trajectory, t: usize) -> u8 {
    let mean = mean_heading_change(traj, t);
    if mean.abs() < TURN_THRESHOLD {
        2
    } else if mean > 0.0 {
        1
    } else {
        0
    }
}

fn label_radius_category(traj: &Trajectory, t: usize) -> u8 {
    // Straightness first, on the same window as turn direction but with the
    // changes' magnitudes, so that jittering straight motion stays straight.
    let (lo, hi) = diff_window(traj, t, TURN_WINDOW_RADIUS);
    let diffs = heading_diffs(traj, lo, hi);
    let mean_abs = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
    if mean_abs < TURN_THRESHOLD {
        return 3;
    }
    let lo = t.saturating_sub(FIT_WINDOW_RADIUS);
    let hi = (t + FIT_WINDOW_RADIUS).min(traj.len());
    let points: Vec<[f64; 2]> = (lo..=hi)
        .map(|k| {
            let [x, y] = traj.position(k);
            [x as f64, y as f64]
        })
        .collect();
    match circle_fit::fit_circle(&points) {
        Some(fit) => bin_clamped(fit.radius, RADIUS_LO, RADIUS_HI, 3),
        // Degenerate fit: curvature indistinguishable from zero, treat as
        // the largest radius bucket.
        None => 2,
    }
}

fn label_speed_category(traj: &Trajectory, t: usize) -> u8 {
    let [x0, y0] = traj.position(t);
    let [x1, y1] = traj.position(t + 1);
    let (dx, dy) = ((x1 - x0) as f64, (y1 - y0) as f64);
    bin_clamped((dx * dx + dy * dy).sqrt(), SPEED_LO, SPEED_HI, 3)
}

fn label_curvature_noise(traj: &Trajectory, t: usize) -> u8 {
    let lo = t.saturating_sub(FIT_WINDOW_RADIUS);
    let hi = (t + FIT_WINDOW_RADIUS - 1).min(traj.len() - 1);
    let diffs = heading_diffs(traj, lo, hi);
    if diffs.len() < 3 {
        return 0;
    }
    let second: Vec<f64> = diffs.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = second.iter().sum::<f64>() / second.len() as f64;
    let var = second.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / second.len() as f64;
    bin_clamped(var.sqrt(), 0.0, NOISE_HI, 3)
}

/// How to draw the conditioning label for a transition during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleSampling {
    /// The transition's own label.
    Current,
    /// Uniform over the labels occurring at this step or later in the same
    /// episode.
    Future,
    /// Proportional to the dataset-wide label frequencies.
    Random,
    /// Mixture of the three, with the given non-negative weights.
    Mixture {
        current: f64,
        future: f64,
        random: f64,
    },
}

impl StyleSampling {
    pub fn validate(&self) -> Result<()> {
        if let StyleSampling::Mixture {
            current,
            future,
            random,
        } = *self
        {
            let ok = current >= 0.0 && future >= 0.0 && random >= 0.0;
            let sum = current + future + random;
            if !ok || !(sum > 0.0) || !sum.is_finite() {
                return Err(Error::invalid_argument(format!(
                    "mixture weights must be non-negative with a positive sum, got \
                     ({current}, {future}, {random})"
                )));
            }
        }
        Ok(())
    }
}

/// Pollution level at which a label stream carries no information: with
/// `num_labels` classes, replacing labels with uniform wrong ones at rate
/// `(L-1)/L` makes the polluted stream match a uniform relabeling.
pub fn zeta_threshold(num_labels: usize) -> f64 {
    (num_labels as f64 - 1.0) / num_labels as f64
}

/// A dataset annotated under one criterion, with the index structures the
/// style-sampling distributions need.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dataset: Arc<Dataset>,
    pub criterion: CriterionId,
    /// `labels[e][t]` for transition `t` of episode `e`.
    pub labels: Vec<Vec<u8>>,
    /// Pollution level these labels carry (0 for clean annotations).
    pub zeta: f64,
    /// Seed used for pollution, when any.
    pub pollution_seed: Option<u64>,
    /// `suffix[e][t * L + z]`: occurrences of label `z` at steps `>= t`.
    suffix: Vec<Vec<u32>>,
    /// Dataset-wide label histogram.
    histogram: Vec<u64>,
}

fn build_suffix(labels: &[u8], num_labels: usize) -> Vec<u32> {
    let t_len = labels.len();
    let mut suffix = vec![0u32; t_len * num_labels];
    let mut acc = vec![0u32; num_labels];
    for t in (0..t_len).rev() {
        acc[labels[t] as usize] += 1;
        suffix[t * num_labels..(t + 1) * num_labels].copy_from_slice(&acc);
    }
    suffix
}

fn index_labels(
    dataset: Arc<Dataset>,
    criterion: CriterionId,
    labels: Vec<Vec<u8>>,
    zeta: f64,
    pollution_seed: Option<u64>,
    mode: ExecMode,
) -> LabeledDataset {
    let num_labels = criterion.num_labels();
    let suffix = exec::map_indexed(mode, labels.len(), |e| build_suffix(&labels[e], num_labels));
    let mut histogram = vec![0u64; num_labels];
    for ep in &labels {
        for &z in ep {
            histogram[z as usize] += 1;
        }
    }
    LabeledDataset {
        dataset,
        criterion,
        labels,
        zeta,
        pollution_seed,
        suffix,
        histogram,
    }
}

/// Annotate every transition of a dataset under a criterion.
pub fn annotate(dataset: &Arc<Dataset>, criterion: CriterionId, mode: ExecMode) -> LabeledDataset {
    let labels = exec::map_indexed(mode, dataset.episodes.len(), |e| {
        label_trajectory(criterion, &dataset.episodes[e])
    });
    index_labels(Arc::clone(dataset), criterion, labels, 0.0, None, mode)
}

impl LabeledDataset {
    pub fn num_labels(&self) -> usize {
        self.criterion.num_labels()
    }

    /// Dataset-wide label histogram.
    pub fn histogram(&self) -> &[u64] {
        &self.histogram
    }

    /// Return a copy with each label independently replaced, with
    /// probability `zeta`, by a label drawn uniformly from the other
    /// classes. `zeta` must lie in `[0, 1]`.
    pub fn pollute(&self, zeta: f64, seed: u64, mode: ExecMode) -> Result<LabeledDataset> {
        if !(0.0..=1.0).contains(&zeta) {
            return Err(Error::invalid_argument(format!(
                "pollution level must lie in [0, 1], got {zeta}"
            )));
        }
        let num_labels = self.num_labels();
        let labels = exec::map_indexed(mode, self.labels.len(), |e| {
            let mut rng = seeding::rng_for_indexed(seed, "pollute", e as u64);
            self.labels[e]
                .iter()
                .map(|&z| {
                    if rng.random::<f64>() < zeta {
                        let k = rng.random_range(0..num_labels - 1) as u8;
                        if k >= z {
                            k + 1
                        } else {
                            k
                        }
                    } else {
                        z
                    }
                })
                .collect()
        });
        Ok(index_labels(
            Arc::clone(&self.dataset),
            self.criterion,
            labels,
            zeta,
            Some(seed),
            mode,
        ))
    }

    /// Draw a conditioning label for transition `(episode, t)`.
    pub fn sample_style(
        &self,
        episode: usize,
        t: usize,
        sampling: &StyleSampling,
        rng: &mut ChaCha8Rng,
    ) -> u8 {
        match *sampling {
            StyleSampling::Current => self.labels[episode][t],
            StyleSampling::Future => {
                let num_labels = self.num_labels();
                let row = &self.suffix[episode][t * num_labels..(t + 1) * num_labels];
                let total: u32 = (self.labels[episode].len() - t) as u32;
                let mut pick = rng.random_range(0..total);
                for (z, &c) in row.iter().enumerate() {
                    if pick < c {
                        return z as u8;
                    }
                    pick -= c;
                }
                unreachable!("suffix counts sum to the remaining step count")
            }
            StyleSampling::Random => {
                let total: u64 = self.histogram.iter().sum();
                let mut pick = rng.random_range(0..total);
                for (z, &c) in self.histogram.iter().enumerate() {
                    if pick < c {
                        return z as u8;
                    }
                    pick -= c;
                }
                unreachable!("histogram sums to the transition count")
            }
            StyleSampling::Mixture {
                current,
                future,
                random,
            } => {
                let sum = current + future + random;
                let x = rng.random::<f64>() * sum;
                let component = if x < current {
                    StyleSampling::Current
                } else if x < current + future {
                    StyleSampling::Future
                } else {
                    StyleSampling::Random
                };
                self.sample_style(episode, t, &component, rng)
            }
        }
    }

    /// Write the labels (not the dataset) to a sidecar file that records
    /// which dataset and criterion it belongs to.
    pub fn save_sidecar(&self, path: &Path) -> Result<()> {
        let n = self.labels.len();
        let t = self.dataset.header.horizon as usize;
        let meta = serde_json::json!({
            "criterion": self.criterion,
            "zeta": self.zeta,
            "pollution_seed": self.pollution_seed,
            "n_episodes": n,
            "horizon": t,
            "dataset_seed": self.dataset.header.seed,
        });
        let mut c = Container::new(meta);
        let flat: Vec<u8> = self.labels.iter().flatten().copied().collect();
        c.push(NamedArray::u8("labels", &[n, t], flat));
        io::write_file(path, io::MAGIC_LABELS, &c)
    }

    /// Load a sidecar and attach it to the dataset it was built from.
    /// Episode count, horizon, and the dataset seed must all match.
    pub fn load_sidecar(path: &Path, dataset: &Arc<Dataset>, mode: ExecMode) -> Result<LabeledDataset> {
        #[derive(Deserialize)]
        struct Meta {
            criterion: CriterionId,
            zeta: f64,
            pollution_seed: Option<u64>,
            n_episodes: usize,
            horizon: usize,
            dataset_seed: u64,
        }
        let c = io::read_file(path, io::MAGIC_LABELS)?;
        let meta: Meta = c.meta_as()?;
        let n = dataset.header.n_episodes;
        let t = dataset.header.horizon as usize;
        if meta.n_episodes != n || meta.horizon != t || meta.dataset_seed != dataset.header.seed {
            return Err(Error::format(
                "sidecar",
                format!(
                    "labels were built for {} episodes x {} steps of dataset seed {}, \
                     not this dataset ({n} x {t}, seed {})",
                    meta.n_episodes, meta.horizon, meta.dataset_seed, dataset.header.seed
                ),
            ));
        }
        let arr = c.array("labels")?;
        if arr.shape != [n, t] {
            return Err(Error::format(
                "labels",
                format!("shape {:?} does not match {n} x {t}", arr.shape),
            ));
        }
        let flat = arr.as_u8()?;
        let num_labels = meta.criterion.num_labels();
        if let Some(&bad) = flat.iter().find(|&&z| z as usize >= num_labels) {
            return Err(Error::format(
                "labels",
                format!("label {bad} out of range for {num_labels} classes"),
            ));
        }
        let labels: Vec<Vec<u8>> = (0..n).map(|e| flat[e * t..(e + 1) * t].to_vec()).collect();
        Ok(index_labels(
            Arc::clone(dataset),
            meta.criterion,
            labels,
            meta.zeta,
            meta.pollution_seed,
            mode,
        ))
    }
}
