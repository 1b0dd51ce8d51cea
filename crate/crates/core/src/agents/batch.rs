//! Minibatch assembly from a labeled dataset.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::env::{OBS_DIM, POS_BOUND};
use crate::labeling::{LabeledDataset, StyleSampling};
use crate::tensor::DenseArray;

/// Scale raw pose-history observations into roughly unit range: positions
/// divided by the arena half-width, headings by pi.
pub fn featurize_obs(obs: &[f32; OBS_DIM]) -> [f32; OBS_DIM] {
    let mut out = *obs;
    for c in out.chunks_exact_mut(3) {
        c[0] /= POS_BOUND;
        c[1] /= POS_BOUND;
        c[2] /= std::f32::consts::PI;
    }
    out
}

/// A training minibatch. Observations are already featurized; rewards are
/// the raw task rewards recorded in the dataset.
pub struct Batch {
    /// `[B, OBS_DIM]` featurized observations.
    pub obs: DenseArray,
    /// `[B, OBS_DIM]` featurized next-step observations.
    pub next_obs: DenseArray,
    /// `[B, OBS_DIM + 2]` observations with the raw action appended, the
    /// input of action-value networks.
    pub obs_act: DenseArray,
    /// `[B, 2]` raw recorded actions.
    pub actions: DenseArray,
    pub rewards: Vec<f32>,
    /// 1.0 where the transition ends its episode.
    pub done: Vec<f32>,
    /// Conditioning label drawn from the requested sampling distribution.
    pub z: Vec<u8>,
    /// The transition's own label.
    pub z_center: Vec<u8>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Draw `batch_size` transitions uniformly (with replacement) across all
/// episodes, attaching a conditioning label drawn per transition from
/// `sampling`.
pub fn sample_batch(
    labeled: &LabeledDataset,
    sampling: &StyleSampling,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Batch {
    let t_len = labeled.dataset.header.horizon as usize;
    let n_total = labeled.dataset.n_transitions();
    let mut obs = DenseArray::zeros(&[batch_size, OBS_DIM]);
    let mut next_obs = DenseArray::zeros(&[batch_size, OBS_DIM]);
    let mut obs_act = DenseArray::zeros(&[batch_size, OBS_DIM + 2]);
    let mut actions = DenseArray::zeros(&[batch_size, 2]);
    let mut rewards = Vec::with_capacity(batch_size);
    let mut done = Vec::with_capacity(batch_size);
    let mut z = Vec::with_capacity(batch_size);
    let mut z_center = Vec::with_capacity(batch_size);
    for i in 0..batch_size {
        let idx = rng.random_range(0..n_total);
        let (e, t) = (idx / t_len, idx % t_len);
        let ep = &labeled.dataset.episodes[e];
        let o = featurize_obs(&ep.observation(t));
        let o2 = featurize_obs(&ep.observation(t + 1));
        obs.row_mut(i).copy_from_slice(&o);
        next_obs.row_mut(i).copy_from_slice(&o2);
        obs_act.row_mut(i)[..OBS_DIM].copy_from_slice(&o);
        obs_act.row_mut(i)[OBS_DIM..].copy_from_slice(&ep.actions[t]);
        actions.row_mut(i).copy_from_slice(&ep.actions[t]);
        rewards.push(ep.rewards[t]);
        done.push(if t + 1 == t_len { 1.0 } else { 0.0 });
        z.push(labeled.sample_style(e, t, sampling, rng));
        z_center.push(labeled.labels[e][t]);
    }
    Batch {
        obs,
        next_obs,
        obs_act,
        actions,
        rewards,
        done,
        z,
        z_center,
    }
}
