//! Style-compatibility scores `chi(s, a, z)` in [0, 1]-ish range, used as
//! the reward for style value learning and as per-label weights.
//!
//! Four interchangeable strategies:
//! * `Indicator` — 1 exactly when the sampled conditioning label equals the
//!   label observed at the transition; no learning.
//! * `Mine` — a statistics network `T(s, a, z)` trained on the
//!   Donsker-Varadhan bound; `chi = p(z) * exp(T)` estimates the density
//!   ratio times the marginal, i.e. the posterior `p(z | s, a)`.
//! * `Sigmoid` / `Softmax` — a direct head producing all labels' scores in
//!   one pass, trained through the same bound via `T = ln(alpha_z + eps)`.

use crate::error::{Error, Result};
use crate::exec::ExecMode;
use crate::nn::{
    adam_step, backward, forward, forward_only, init_params, AdamConfig, GradientSet, MlpSpec,
    ParameterSet,
};
use crate::tensor::DenseArray;

/// Statistics-network clamp before exponentiation.
pub const T_CLAMP: f64 = 20.0;
/// Smoothing of the marginal-term denominator across batches.
pub const DENOM_EMA_DECAY: f64 = 0.99;
const DENOM_FLOOR: f64 = 1e-6;
const ALPHA_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChiStrategy {
    Indicator,
    Mine,
    Sigmoid,
    Softmax,
}

impl ChiStrategy {
    pub fn name(self) -> &'static str {
        match self {
            ChiStrategy::Indicator => "indicator",
            ChiStrategy::Mine => "mine",
            ChiStrategy::Sigmoid => "sigmoid",
            ChiStrategy::Softmax => "softmax",
        }
    }

    pub fn needs_training(self) -> bool {
        !matches!(self, ChiStrategy::Indicator)
    }
}

impl std::str::FromStr for ChiStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indicator" => Ok(ChiStrategy::Indicator),
            "mine" => Ok(ChiStrategy::Mine),
            "sigmoid" => Ok(ChiStrategy::Sigmoid),
            "softmax" => Ok(ChiStrategy::Softmax),
            other => Err(Error::invalid_argument(format!(
                "unknown chi strategy '{other}' (expected indicator|mine|sigmoid|softmax)"
            ))),
        }
    }
}

/// A compatibility model plus the state its training needs.
#[derive(Debug, Clone)]
pub struct ChiModel {
    pub strategy: ChiStrategy,
    pub spec: Option<MlpSpec>,
    pub params: Option<ParameterSet>,
    /// Empirical label marginal of the training labels.
    pub marginal: Vec<f64>,
    denom_ema: f64,
    denom_seen: bool,
}

/// Element-wise direct-head activation and its `T = ln(alpha + eps)`.
fn direct_alpha(strategy: ChiStrategy, logits: &[f32]) -> Vec<f64> {
    match strategy {
        ChiStrategy::Sigmoid => logits
            .iter()
            .map(|&l| crate::agents::score::sigmoid(l as f64))
            .collect(),
        ChiStrategy::Softmax => {
            let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
            let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter().map(|e| e / sum).collect()
        }
        _ => unreachable!("direct activation on non-direct strategy"),
    }
}

impl ChiModel {
    pub fn new(
        strategy: ChiStrategy,
        num_labels: usize,
        input_dim: usize,
        hidden: &[usize],
        embed_dim: usize,
        histogram: &[u64],
        seed: u64,
    ) -> Result<ChiModel> {
        if histogram.len() != num_labels {
            return Err(Error::invalid_argument(format!(
                "histogram has {} bins for {} labels",
                histogram.len(),
                num_labels
            )));
        }
        let total: u64 = histogram.iter().sum();
        if total == 0 {
            return Err(Error::invalid_argument("empty label histogram"));
        }
        let marginal: Vec<f64> = histogram.iter().map(|&c| c as f64 / total as f64).collect();
        let spec = match strategy {
            ChiStrategy::Indicator => None,
            ChiStrategy::Mine => {
                Some(MlpSpec::new(input_dim, hidden, 1).with_embedding(num_labels, embed_dim))
            }
            ChiStrategy::Sigmoid | ChiStrategy::Softmax => {
                Some(MlpSpec::new(input_dim, hidden, num_labels))
            }
        };
        let params = spec.as_ref().map(|s| init_params(s, seed));
        Ok(ChiModel { strategy, spec, params, marginal, denom_ema: 0.0, denom_seen: false })
    }

    fn net(&self) -> (&MlpSpec, &ParameterSet) {
        (
            self.spec.as_ref().expect("strategy has no network"),
            self.params.as_ref().expect("strategy has no network"),
        )
    }

    /// `chi(s, a, z)` for one label per sample.
    pub fn values(
        &self,
        obs_act: &DenseArray,
        z: &[u8],
        z_center: &[u8],
        mode: ExecMode,
    ) -> Result<Vec<f64>> {
        match self.strategy {
            ChiStrategy::Indicator => Ok(z
                .iter()
                .zip(z_center)
                .map(|(a, b)| if a == b { 1.0 } else { 0.0 })
                .collect()),
            ChiStrategy::Mine => {
                let (spec, params) = self.net();
                let t = forward_only(spec, params, obs_act, Some(z), mode)?;
                Ok(t.data()
                    .iter()
                    .zip(z)
                    .map(|(&ti, &zi)| {
                        self.marginal[zi as usize] * (ti as f64).clamp(-T_CLAMP, T_CLAMP).exp()
                    })
                    .collect())
            }
            ChiStrategy::Sigmoid | ChiStrategy::Softmax => {
                let (spec, params) = self.net();
                let logits = forward_only(spec, params, obs_act, None, mode)?;
                Ok(z.iter()
                    .enumerate()
                    .map(|(i, &zi)| direct_alpha(self.strategy, logits.row(i))[zi as usize])
                    .collect())
            }
        }
    }

    /// `chi(s, a, z)` for every label: a `[batch, num_labels]` array.
    pub fn values_all(
        &self,
        obs_act: &DenseArray,
        z_center: &[u8],
        num_labels: usize,
        mode: ExecMode,
    ) -> Result<DenseArray> {
        let (batch, _) = obs_act.dims2();
        let mut out = DenseArray::zeros(&[batch, num_labels]);
        match self.strategy {
            ChiStrategy::Indicator => {
                for i in 0..batch {
                    out.row_mut(i)[z_center[i] as usize] = 1.0;
                }
            }
            ChiStrategy::Mine => {
                let (spec, params) = self.net();
                for z in 0..num_labels {
                    let labels = vec![z as u8; batch];
                    let t = forward_only(spec, params, obs_act, Some(&labels), mode)?;
                    for i in 0..batch {
                        out.row_mut(i)[z] = (self.marginal[z]
                            * (t.data()[i] as f64).clamp(-T_CLAMP, T_CLAMP).exp())
                            as f32;
                    }
                }
            }
            ChiStrategy::Sigmoid | ChiStrategy::Softmax => {
                let (spec, params) = self.net();
                let logits = forward_only(spec, params, obs_act, None, mode)?;
                for i in 0..batch {
                    let alpha = direct_alpha(self.strategy, logits.row(i));
                    for z in 0..num_labels {
                        out.row_mut(i)[z] = alpha[z] as f32;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Instantaneous Donsker-Varadhan bound value for a batch, using the
    /// batch-mean denominator (no smoothing, no parameter update).
    pub fn objective(
        &self,
        obs_act: &DenseArray,
        z_center: &[u8],
        marginal_z: &[u8],
        mode: ExecMode,
    ) -> Result<f64> {
        let (t_joint, t_marg) = self.statistics(obs_act, z_center, marginal_z, mode)?.0;
        let b = t_joint.len() as f64;
        let joint = t_joint.iter().sum::<f64>() / b;
        let denom = t_marg.iter().map(|t| t.exp()).sum::<f64>() / b;
        Ok(joint - denom.max(DENOM_FLOOR).ln())
    }

    /// Clamped statistics values for the joint and marginal label draws,
    /// plus whatever taped forwards the gradient path needs.
    #[allow(clippy::type_complexity)]
    fn statistics(
        &self,
        obs_act: &DenseArray,
        z_center: &[u8],
        marginal_z: &[u8],
        mode: ExecMode,
    ) -> Result<((Vec<f64>, Vec<f64>), StatTapes)> {
        let (batch, _) = obs_act.dims2();
        match self.strategy {
            ChiStrategy::Indicator => Err(Error::invalid_state(
                "indicator strategy has nothing to train",
            )),
            ChiStrategy::Mine => {
                let (spec, params) = self.net();
                let (tj, tape_j) = forward(spec, params, obs_act, Some(z_center), mode)?;
                let (tm, tape_m) = forward(spec, params, obs_act, Some(marginal_z), mode)?;
                let clamp = |x: &f32| (*x as f64).clamp(-T_CLAMP, T_CLAMP);
                Ok((
                    (tj.data().iter().map(clamp).collect(), tm.data().iter().map(clamp).collect()),
                    StatTapes::Mine { joint: tape_j, marginal: tape_m },
                ))
            }
            ChiStrategy::Sigmoid | ChiStrategy::Softmax => {
                let (spec, params) = self.net();
                let (logits, tape) = forward(spec, params, obs_act, None, mode)?;
                let mut tj = Vec::with_capacity(batch);
                let mut tm = Vec::with_capacity(batch);
                let mut alphas = Vec::with_capacity(batch);
                for i in 0..batch {
                    let alpha = direct_alpha(self.strategy, logits.row(i));
                    tj.push((alpha[z_center[i] as usize] + ALPHA_EPS).ln().clamp(-T_CLAMP, T_CLAMP));
                    tm.push((alpha[marginal_z[i] as usize] + ALPHA_EPS).ln().clamp(-T_CLAMP, T_CLAMP));
                    alphas.push(alpha);
                }
                Ok(((tj, tm), StatTapes::Direct { tape, alphas }))
            }
        }
    }

    /// Objective value and parameter gradients for one bound-maximization
    /// step. Advances the denominator EMA; gradients treat the smoothed
    /// denominator as a constant (on the first batch it equals the batch
    /// mean, so the gradient is exact there).
    pub fn train_grads(
        &mut self,
        obs_act: &DenseArray,
        z_center: &[u8],
        marginal_z: &[u8],
        mode: ExecMode,
    ) -> Result<(f64, GradientSet)> {
        let ((tj, tm), tapes) = self.statistics(obs_act, z_center, marginal_z, mode)?;
        let batch = tj.len();
        let inv_b = 1.0 / batch as f64;
        let exp_tm: Vec<f64> = tm.iter().map(|t| t.exp()).collect();
        let batch_mean = exp_tm.iter().sum::<f64>() * inv_b;
        if self.denom_seen {
            self.denom_ema =
                DENOM_EMA_DECAY * self.denom_ema + (1.0 - DENOM_EMA_DECAY) * batch_mean;
        } else {
            self.denom_ema = batch_mean;
            self.denom_seen = true;
        }
        let denom = self.denom_ema.max(DENOM_FLOOR);
        let objective = tj.iter().sum::<f64>() * inv_b - batch_mean.max(DENOM_FLOOR).ln();

        // Loss = -bound; d(-J)/dT_joint_i = -1/B,
        // d(-J)/dT_marg_i = exp(T_marg_i) / (B * denom).
        let (spec, params) = self.net();
        let grads = match tapes {
            StatTapes::Mine { joint, marginal } => {
                let mut dj = DenseArray::zeros(&[batch, 1]);
                let mut dm = DenseArray::zeros(&[batch, 1]);
                for i in 0..batch {
                    dj.data_mut()[i] = (-inv_b) as f32;
                    dm.data_mut()[i] = (exp_tm[i] * inv_b / denom) as f32;
                }
                let mut g = backward(spec, params, &joint, &dj, mode)?;
                g.merge(backward(spec, params, &marginal, &dm, mode)?);
                g
            }
            StatTapes::Direct { tape, alphas } => {
                let num_labels = spec.output_dim;
                let mut dout = DenseArray::zeros(&[batch, num_labels]);
                for i in 0..batch {
                    let alpha = &alphas[i];
                    let row = dout.row_mut(i);
                    let mut add_term = |z: usize, coeff: f64| {
                        // d ln(alpha_z + eps) / d logit_k through the head.
                        let front = alpha[z] / (alpha[z] + ALPHA_EPS);
                        match self.strategy {
                            ChiStrategy::Softmax => {
                                for k in 0..num_labels {
                                    let delta = if k == z { 1.0 } else { 0.0 };
                                    row[k] += (coeff * front * (delta - alpha[k])) as f32;
                                }
                            }
                            ChiStrategy::Sigmoid => {
                                row[z] += (coeff * (1.0 - alpha[z]) * front) as f32;
                            }
                            _ => unreachable!(),
                        }
                    };
                    add_term(z_center[i] as usize, -inv_b);
                    add_term(marginal_z[i] as usize, exp_tm[i] * inv_b / denom);
                }
                backward(spec, params, &tape, &dout, mode)?
            }
        };
        Ok((objective, grads))
    }

    /// One full bound-maximization step. Returns the bound estimate.
    pub fn train_step(
        &mut self,
        obs_act: &DenseArray,
        z_center: &[u8],
        marginal_z: &[u8],
        adam: &AdamConfig,
        mode: ExecMode,
    ) -> Result<f64> {
        let (objective, grads) = self.train_grads(obs_act, z_center, marginal_z, mode)?;
        adam_step(self.params.as_mut().expect("strategy has no network"), &grads, adam, 1.0)?;
        Ok(objective)
    }
}

enum StatTapes {
    Mine { joint: crate::nn::Tape, marginal: crate::nn::Tape },
    Direct { tape: crate::nn::Tape, alphas: Vec<Vec<f64>> },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_for;
    use rand::RngExt;

    #[test]
    fn indicator_is_label_equality() {
        let model =
            ChiModel::new(ChiStrategy::Indicator, 3, 4, &[8], 4, &[5, 5, 5], 0).unwrap();
        let obs_act = DenseArray::zeros(&[3, 4]);
        let vals = model
            .values(&obs_act, &[0, 1, 2], &[0, 2, 2], ExecMode::Sequential)
            .unwrap();
        assert_eq!(vals, vec![1.0, 0.0, 1.0]);
    }

    /// A two-label source with the label readable off the observation has
    /// mutual information ln 2; the bound estimate should land there.
    #[test]
    fn mine_bound_reaches_ln_2() {
        let mut rng = rng_for(21, "mine-ln2");
        let model = ChiModel::new(ChiStrategy::Mine, 2, 3, &[32], 4, &[1, 1], 22).unwrap();
        let mut model = model;
        let adam = AdamConfig::with_learning_rate(3e-3);
        let batch = 128;
        let mut tail = Vec::new();
        for step in 0..1500 {
            let mut xs = Vec::with_capacity(batch * 3);
            let mut zs = Vec::with_capacity(batch);
            let mut zm = Vec::with_capacity(batch);
            for _ in 0..batch {
                let z: u8 = if rng.random_range(0.0f64..1.0) < 0.5 { 0 } else { 1 };
                xs.push(if z == 0 { 0.8 } else { -0.8 });
                xs.push(rng.random_range(-0.3f32..0.3));
                xs.push(rng.random_range(-0.3f32..0.3));
                zs.push(z);
                zm.push(if rng.random_range(0.0f64..1.0) < 0.5 { 0 } else { 1 });
            }
            let obs_act = DenseArray::from_vec(&[batch, 3], xs).unwrap();
            let j = model.train_step(&obs_act, &zs, &zm, &adam, ExecMode::Sequential).unwrap();
            if step >= 1300 {
                tail.push(j);
            }
        }
        let avg = tail.iter().sum::<f64>() / tail.len() as f64;
        assert!((avg - std::f64::consts::LN_2).abs() < 0.05, "bound settled at {avg}");
    }

    /// Direct softmax head trained on the same source: its per-label
    /// scores become an indicator of the true label.
    #[test]
    fn softmax_head_learns_posterior() {
        let mut rng = rng_for(31, "softmax-post");
        let mut model = ChiModel::new(ChiStrategy::Softmax, 2, 2, &[16], 4, &[1, 1], 32).unwrap();
        let adam = AdamConfig::with_learning_rate(3e-3);
        let batch = 64;
        for _ in 0..800 {
            let mut xs = Vec::with_capacity(batch * 2);
            let mut zs = Vec::with_capacity(batch);
            let mut zm = Vec::with_capacity(batch);
            for _ in 0..batch {
                let z: u8 = if rng.random_range(0.0f64..1.0) < 0.5 { 0 } else { 1 };
                xs.push(if z == 0 { 1.0 } else { -1.0 });
                xs.push(rng.random_range(-0.2f32..0.2));
                zs.push(z);
                zm.push(if rng.random_range(0.0f64..1.0) < 0.5 { 0 } else { 1 });
            }
            let obs_act = DenseArray::from_vec(&[batch, 2], xs).unwrap();
            model.train_step(&obs_act, &zs, &zm, &adam, ExecMode::Sequential).unwrap();
        }
        let probe = DenseArray::from_vec(&[2, 2], vec![1.0, 0.0, -1.0, 0.0]).unwrap();
        let all = model.values_all(&probe, &[0, 1], 2, ExecMode::Sequential).unwrap();
        assert!(all.row(0)[0] > 0.9, "{:?}", all.data());
        assert!(all.row(1)[1] > 0.9, "{:?}", all.data());
        assert!(all.row(0)[1] < 0.1, "{:?}", all.data());
    }

    #[test]
    fn values_all_matches_per_label_values() {
        for strategy in [ChiStrategy::Mine, ChiStrategy::Sigmoid, ChiStrategy::Softmax] {
            let model = ChiModel::new(strategy, 3, 4, &[8], 4, &[2, 3, 5], 7).unwrap();
            let mut rng = rng_for(8, "values-all");
            let obs_act = DenseArray::from_vec(
                &[5, 4],
                (0..20).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let center = vec![0u8, 1, 2, 0, 1];
            let all = model.values_all(&obs_act, &center, 3, ExecMode::Sequential).unwrap();
            for z in 0..3u8 {
                let labels = vec![z; 5];
                let single =
                    model.values(&obs_act, &labels, &center, ExecMode::Sequential).unwrap();
                for i in 0..5 {
                    assert!(
                        (all.row(i)[z as usize] as f64 - single[i]).abs() < 1e-6,
                        "{strategy:?} mismatch at ({i}, {z})"
                    );
                }
            }
        }
    }

    /// On the first batch the smoothed denominator equals the batch mean,
    /// so the analytic gradient is the exact gradient of the bound; check
    /// it against central differences for every strategy with a network.
    #[test]
    fn bound_gradients_match_finite_differences() {
        for strategy in [ChiStrategy::Mine, ChiStrategy::Sigmoid, ChiStrategy::Softmax] {
            let mut rng = rng_for(9, "chi-fd");
            let obs_act = DenseArray::from_vec(
                &[6, 3],
                (0..18).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
            )
            .unwrap();
            let center = vec![0u8, 1, 2, 1, 0, 2];
            let marg = vec![2u8, 0, 1, 1, 2, 0];
            let mut model = ChiModel::new(strategy, 3, 3, &[6], 3, &[4, 4, 4], 10).unwrap();
            let (_, grads) = model
                .train_grads(&obs_act, &center, &marg, ExecMode::Sequential)
                .unwrap();
            let names: Vec<String> =
                model.params.as_ref().unwrap().names().map(|s| s.to_string()).collect();
            let eps = 2e-3f32;
            for name in names {
                let n = model.params.as_ref().unwrap().get(&name).unwrap().len();
                for j in (0..n).step_by(5) {
                    let eval = |delta: f32| -> f64 {
                        let mut m = model.clone();
                        m.params.as_mut().unwrap().get_mut(&name).unwrap().data_mut()[j] += delta;
                        m.objective(&obs_act, &center, &marg, ExecMode::Sequential).unwrap()
                    };
                    // Gradient set stores d(-J); FD measures dJ.
                    let fd = -(eval(eps) - eval(-eps)) / (2.0 * eps as f64);
                    let an = grads.get(&name).map(|g| g.data()[j] as f64).unwrap_or(0.0);
                    assert!(
                        (fd - an).abs() < 2e-3 * fd.abs().max(an.abs()).max(0.1),
                        "{strategy:?} {name}[{j}]: fd {fd}, analytic {an}"
                    );
                }
            }
        }
    }
}
