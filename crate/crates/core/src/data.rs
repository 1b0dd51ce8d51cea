//! Trajectory datasets: in-memory representation and the on-disk container.
//!
//! A dataset is a fixed-horizon collection of episodes plus a header that
//! pins everything needed to reproduce or normalize against it: the
//! generating environment configuration, the behavior variant, the seed,
//! and the return-normalization bounds computed at generation time.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{self, EnvConfig, OBS_DIM, POS_BOUND};
use crate::error::{Error, Result};
use crate::io::{self, Container, NamedArray};

/// Which scripted behavior family generated a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenVariant {
    /// Each episode circles around its own start point.
    Inplace,
    /// Each episode first travels to a remote circle, then orbits it.
    Navigate,
}

/// One episode: `T + 1` pose triplets, `T` raw actions, `T` rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub triplets: Vec<[f32; 3]>,
    pub actions: Vec<[f32; 2]>,
    pub rewards: Vec<f32>,
}

impl Trajectory {
    /// Validate the length relations between the three streams.
    pub fn validate(&self) -> Result<()> {
        let t = self.actions.len();
        if self.triplets.len() != t + 1 || self.rewards.len() != t {
            return Err(Error::invalid_argument(format!(
                "inconsistent trajectory: {} poses, {} actions, {} rewards",
                self.triplets.len(),
                t,
                self.rewards.len()
            )));
        }
        Ok(())
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn position(&self, t: usize) -> [f32; 2] {
        let [x, y, _] = self.triplets[t];
        [x, y]
    }

    /// Observation at pose index `t` (`0 ..= len()`), built the same way the
    /// environment builds its history: the poses at `t-3 .. t`, with
    /// indices before the start clamped to the initial pose.
    pub fn observation(&self, t: usize) -> [f32; OBS_DIM] {
        let mut out = [0.0f32; OBS_DIM];
        for i in 0..env::HISTORY {
            let src = (t + i).saturating_sub(env::HISTORY - 1).min(t);
            out[i * 3..i * 3 + 3].copy_from_slice(&self.triplets[src]);
        }
        out
    }

    /// Undiscounted episode return, accumulated in f64.
    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().map(|&r| r as f64).sum()
    }
}

/// Dataset metadata, embedded in the container manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub env: EnvConfig,
    pub variant: GenVariant,
    pub n_episodes: usize,
    pub horizon: u32,
    pub seed: u64,
    /// Lowest episode return in the dataset; the floor of the
    /// return-normalization range.
    pub return_lo: f64,
    /// Return of the best scripted controller run directly on the task
    /// target; the ceiling of the return-normalization range.
    pub return_hi: f64,
}

/// A fixed-horizon episode collection.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub episodes: Vec<Trajectory>,
}

impl Dataset {
    /// Validate counts, stream lengths, and state-space bounds.
    pub fn validate(&self) -> Result<()> {
        self.header.env.validate()?;
        if self.episodes.len() != self.header.n_episodes {
            return Err(Error::invalid_argument(format!(
                "header claims {} episodes, found {}",
                self.header.n_episodes,
                self.episodes.len()
            )));
        }
        if self.header.return_hi <= self.header.return_lo {
            return Err(Error::invalid_argument(format!(
                "degenerate return bounds [{}, {}]",
                self.header.return_lo, self.header.return_hi
            )));
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            ep.validate()?;
            if ep.len() != self.header.horizon as usize {
                return Err(Error::invalid_argument(format!(
                    "episode {i} has {} transitions, horizon is {}",
                    ep.len(),
                    self.header.horizon
                )));
            }
            for &[x, y, theta] in &ep.triplets {
                if x.abs() > POS_BOUND || y.abs() > POS_BOUND || theta.abs() > std::f32::consts::PI
                {
                    return Err(Error::invalid_argument(format!(
                        "episode {i} leaves the state space: ({x}, {y}, {theta})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total number of transitions.
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.len()).sum()
    }

    /// Pack into a container: header as metadata, pose/action/reward streams
    /// as three dense arrays.
    pub fn to_container(&self) -> Result<Container> {
        let n = self.episodes.len();
        let t = self.header.horizon as usize;
        let meta = serde_json::to_value(&self.header)
            .map_err(|e| Error::format("dataset header", e.to_string()))?;
        let mut c = Container::new(meta);
        let mut triplets = Vec::with_capacity(n * (t + 1) * 3);
        let mut actions = Vec::with_capacity(n * t * 2);
        let mut rewards = Vec::with_capacity(n * t);
        for ep in &self.episodes {
            ep.validate()?;
            if ep.len() != t {
                return Err(Error::invalid_argument(
                    "all episodes must share the header horizon",
                ));
            }
            triplets.extend(ep.triplets.iter().flatten());
            actions.extend(ep.actions.iter().flatten());
            rewards.extend_from_slice(&ep.rewards);
        }
        c.push(NamedArray::f32("triplets", &[n, t + 1, 3], triplets));
        c.push(NamedArray::f32("actions", &[n, t, 2], actions));
        c.push(NamedArray::f32("rewards", &[n, t], rewards));
        Ok(c)
    }

    /// Rebuild from a container and validate it.
    pub fn from_container(c: &Container) -> Result<Dataset> {
        let header: DatasetHeader = c.meta_as()?;
        let n = header.n_episodes;
        let t = header.horizon as usize;
        let triplets = c.array("triplets")?;
        let actions = c.array("actions")?;
        let rewards = c.array("rewards")?;
        for (arr, want) in [
            (triplets, vec![n, t + 1, 3]),
            (actions, vec![n, t, 2]),
            (rewards, vec![n, t]),
        ] {
            if arr.shape != want {
                return Err(Error::format(
                    format!("array '{}'", arr.name),
                    format!("shape {:?}, header implies {:?}", arr.shape, want),
                ));
            }
        }
        let tri = triplets.as_f32()?;
        let act = actions.as_f32()?;
        let rew = rewards.as_f32()?;
        let mut episodes = Vec::with_capacity(n);
        for i in 0..n {
            let tri_ep = &tri[i * (t + 1) * 3..(i + 1) * (t + 1) * 3];
            let act_ep = &act[i * t * 2..(i + 1) * t * 2];
            episodes.push(Trajectory {
                triplets: tri_ep.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
                actions: act_ep.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
                rewards: rew[i * t..(i + 1) * t].to_vec(),
            });
        }
        let ds = Dataset { header, episodes };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_file(path, io::MAGIC_DATASET, &self.to_container()?)
    }

    pub fn load(path: &Path) -> Result<Arc<Dataset>> {
        let c = io::read_file(path, io::MAGIC_DATASET)?;
        Ok(Arc::new(Dataset::from_container(&c)?))
    }
}
