//! Expectile value learning: a state-value net `V` regressed toward an
//! asymmetric expectile of a target action-value net, and an action-value
//! net `Q` fit by one-step TD against `V`. Both may be label-conditioned
//! via an embedding; the advantages `Q_target - V` come out of every step
//! for free and feed policy extraction.

use crate::error::Result;
use crate::exec::ExecMode;
use crate::nn::{
    adam_step, backward, expectile_grad, expectile_loss, forward, forward_only, init_params,
    polyak_update, AdamConfig, MlpSpec, ParameterSet,
};
use crate::seeding::derive_seed;
use crate::tensor::DenseArray;

/// One value head: `V(s[,z])`, `Q(s,a[,z])`, and a Polyak-averaged copy of
/// `Q` used as the regression target for `V`.
#[derive(Debug, Clone)]
pub struct ValueLearner {
    pub v_spec: MlpSpec,
    pub q_spec: MlpSpec,
    pub v: ParameterSet,
    pub q: ParameterSet,
    pub q_target: ParameterSet,
}

/// Losses and advantages from one [`ValueLearner::step`].
pub struct ValueStepStats {
    pub v_loss: f64,
    pub q_loss: f64,
    /// `Q_target(s,a) - V(s)` per sample, both evaluated before this
    /// step's parameter updates.
    pub advantages: Vec<f64>,
}

impl ValueLearner {
    pub fn new(v_spec: MlpSpec, q_spec: MlpSpec, seed: u64) -> Self {
        let v = init_params(&v_spec, derive_seed(seed, "v"));
        let q = init_params(&q_spec, derive_seed(seed, "q"));
        let q_target = q.clone();
        ValueLearner { v_spec, q_spec, v, q, q_target }
    }

    /// One update of both nets.
    ///
    /// Order matters and is fixed: `V` regresses toward the frozen
    /// `Q_target` under the `kappa`-expectile loss, then `Q` regresses
    /// toward `r + gamma * (1 - done) * V(s')` using the just-updated `V`,
    /// then `Q_target` takes a Polyak step toward `Q`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        obs: &DenseArray,
        obs_act: &DenseArray,
        next_obs: &DenseArray,
        labels: Option<&[u8]>,
        rewards: &[f64],
        done: &[f32],
        gamma: f64,
        kappa: f64,
        adam: &AdamConfig,
        upsilon: f64,
        mode: ExecMode,
    ) -> Result<ValueStepStats> {
        let batch = rewards.len();
        let inv_b = 1.0 / batch as f64;

        let qbar = forward_only(&self.q_spec, &self.q_target, obs_act, labels, mode)?;
        let (v_out, v_tape) = forward(&self.v_spec, &self.v, obs, labels, mode)?;

        let mut v_loss = 0.0f64;
        let mut advantages = Vec::with_capacity(batch);
        let mut dv = DenseArray::zeros(&[batch, 1]);
        for i in 0..batch {
            let u = qbar.data()[i] as f64 - v_out.data()[i] as f64;
            advantages.push(u);
            v_loss += expectile_loss(u, kappa);
            // d loss / d v = -d loss / d u
            dv.data_mut()[i] = (-expectile_grad(u, kappa) * inv_b) as f32;
        }
        v_loss *= inv_b;
        let v_grads = backward(&self.v_spec, &self.v, &v_tape, &dv, mode)?;
        adam_step(&mut self.v, &v_grads, adam, 1.0)?;

        let v_next = forward_only(&self.v_spec, &self.v, next_obs, labels, mode)?;
        let (q_out, q_tape) = forward(&self.q_spec, &self.q, obs_act, labels, mode)?;
        let mut q_loss = 0.0f64;
        let mut dq = DenseArray::zeros(&[batch, 1]);
        for i in 0..batch {
            let y = rewards[i] + gamma * (1.0 - done[i] as f64) * v_next.data()[i] as f64;
            let err = q_out.data()[i] as f64 - y;
            q_loss += err * err;
            dq.data_mut()[i] = (2.0 * err * inv_b) as f32;
        }
        q_loss *= inv_b;
        let q_grads = backward(&self.q_spec, &self.q, &q_tape, &dq, mode)?;
        adam_step(&mut self.q, &q_grads, adam, 1.0)?;

        polyak_update(&mut self.q_target, &self.q, upsilon as f32)?;
        Ok(ValueStepStats { v_loss, q_loss, advantages })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two-point asymmetric expectile by its first-order condition.
    fn two_point_expectile(lo: f64, hi: f64, kappa: f64) -> f64 {
        ((1.0 - kappa) * lo + kappa * hi) / ((1.0 - kappa) + kappa)
    }

    /// Three-state chain fit with the network learner matches tabular
    /// dynamic programming, including the expectile (not mean) aggregation
    /// at the state with two observed actions.
    #[test]
    fn chain_values_match_tabular_dp() {
        let gamma = 0.9;
        let kappa = 0.7;
        // States one-hot in R^3; scalar action appended for Q.
        // s0 --(a=-1, r=0)--> s1; s0 --(a=+1, r=0)--> s2;
        // s1 --(a=0, r=0.2)--> done; s2 --(a=0, r=1.0)--> done.
        let obs = DenseArray::from_vec(
            &[4, 3],
            vec![
                1.0, 0.0, 0.0, //
                1.0, 0.0, 0.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let obs_act = DenseArray::from_vec(
            &[4, 4],
            vec![
                1.0, 0.0, 0.0, -1.0, //
                1.0, 0.0, 0.0, 1.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let next_obs = DenseArray::from_vec(
            &[4, 3],
            vec![
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0, //
                0.0, 1.0, 0.0, //
                0.0, 0.0, 1.0,
            ],
        )
        .unwrap();
        let rewards = [0.0, 0.0, 0.2, 1.0];
        let done = [0.0, 0.0, 1.0, 1.0];

        // Tabular oracle, iterated to its fixed point.
        let (mut v1, mut v2, mut v0) = (0.0f64, 0.0, 0.0);
        for _ in 0..200 {
            let q1 = 0.2;
            let q2 = 1.0;
            let q0a = gamma * v1;
            let q0b = gamma * v2;
            v1 = q1;
            v2 = q2;
            v0 = two_point_expectile(q0a.min(q0b), q0a.max(q0b), kappa);
        }
        assert!((v1 - 0.2).abs() < 1e-12);
        assert!((v2 - 1.0).abs() < 1e-12);

        let v_spec = MlpSpec::new(3, &[24, 24], 1).with_layer_norm();
        let q_spec = MlpSpec::new(4, &[24, 24], 1);
        let mut learner = ValueLearner::new(v_spec.clone(), q_spec.clone(), 11);
        let adam = AdamConfig::with_learning_rate(3e-3);
        for _ in 0..6000 {
            learner
                .step(
                    &obs,
                    &obs_act,
                    &next_obs,
                    None,
                    &rewards,
                    &done,
                    gamma,
                    kappa,
                    &adam,
                    0.02,
                    ExecMode::Sequential,
                )
                .unwrap();
        }

        let v_net =
            forward_only(&v_spec, &learner.v, &obs, None, ExecMode::Sequential).unwrap();
        let q_net =
            forward_only(&q_spec, &learner.q, &obs_act, None, ExecMode::Sequential).unwrap();
        let v_got = [v_net.data()[0] as f64, v_net.data()[2] as f64, v_net.data()[3] as f64];
        let v_want = [v0, v1, v2];
        for (g, w) in v_got.iter().zip(&v_want) {
            assert!((g - w).abs() < 5e-2, "V mismatch: got {v_got:?}, want {v_want:?}");
        }
        let q_want = [gamma * v1, gamma * v2, 0.2, 1.0];
        for i in 0..4 {
            assert!(
                (q_net.data()[i] as f64 - q_want[i]).abs() < 5e-2,
                "Q mismatch at {i}: got {}, want {}",
                q_net.data()[i],
                q_want[i]
            );
        }
        // The expectile pulls V(s0) above the mean of its two Q values.
        let mean0 = (gamma * v1 + gamma * v2) / 2.0;
        assert!(v0 > mean0 + 0.05);
        assert!(v_got[0] > mean0 + 0.02);
    }

    #[test]
    fn target_net_lags_online() {
        let v_spec = MlpSpec::new(2, &[8], 1).with_layer_norm();
        let q_spec = MlpSpec::new(3, &[8], 1);
        let mut learner = ValueLearner::new(v_spec, q_spec, 3);
        let before = learner.q_target.get("out.w").unwrap().data().to_vec();
        let obs = DenseArray::from_vec(&[2, 2], vec![0.1, 0.2, -0.3, 0.4]).unwrap();
        let obs_act =
            DenseArray::from_vec(&[2, 3], vec![0.1, 0.2, 0.5, -0.3, 0.4, -0.5]).unwrap();
        let stats = learner
            .step(
                &obs,
                &obs_act,
                &obs,
                None,
                &[1.0, -1.0],
                &[0.0, 0.0],
                0.99,
                0.7,
                &AdamConfig::default(),
                0.005,
                ExecMode::Sequential,
            )
            .unwrap();
        assert_eq!(stats.advantages.len(), 2);
        let after = learner.q_target.get("out.w").unwrap().data().to_vec();
        let online = learner.q.get("out.w").unwrap().data();
        for i in 0..before.len() {
            let want = 0.995 * before[i] as f64 + 0.005 * online[i] as f64;
            assert!((after[i] as f64 - want).abs() < 1e-6);
        }
    }
}
