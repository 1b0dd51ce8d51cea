//! Diagonal-Gaussian policies trained by weighted log-likelihood.
//!
//! The mean comes from an MLP (optionally label-conditioned); the log
//! standard deviations are free per-dimension parameters stored alongside
//! the network under the name `log_std`, clamped to a sane range when
//! used. Evaluation acts with the mean; the environment clamps raw actions
//! into its box.

use crate::error::Result;
use crate::exec::ExecMode;
use crate::nn::{backward, forward, forward_only, init_params, GradientSet, MlpSpec, ParameterSet};
use crate::tensor::DenseArray;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Initialize policy parameters: the mean network plus zeroed `log_std`.
pub fn init_policy(spec: &MlpSpec, seed: u64) -> ParameterSet {
    let mut params = init_params(spec, seed);
    params.insert("log_std", DenseArray::zeros(&[spec.output_dim]));
    params
}

fn log_stds(params: &ParameterSet, dim: usize) -> Result<Vec<f64>> {
    let raw = params.get("log_std")?;
    Ok(raw.data()[..dim]
        .iter()
        .map(|&s| (s as f64).clamp(LOG_STD_MIN, LOG_STD_MAX))
        .collect())
}

/// Weighted negative log-likelihood and its parameter gradients.
///
/// Loss: `(1/B) * sum_i w_i * -log N(a_i | mu(s_i, z_i), diag(sigma^2))`.
/// Weights are treated as constants. Returns the loss and the gradient set
/// (mean network plus `log_std`), ready for one optimizer step; callers
/// accumulating several passes (e.g. a sum over conditioning labels) merge
/// the gradient sets before applying them.
pub fn policy_loss_grads(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
    actions: &DenseArray,
    weights: &[f64],
    mode: ExecMode,
) -> Result<(f64, GradientSet)> {
    let (batch, adim) = actions.dims2();
    let (mean, tape) = forward(spec, params, obs, labels, mode)?;
    let stds = log_stds(params, adim)?;
    let inv_b = 1.0 / batch as f64;
    let raw_log_std = params.get("log_std")?.data();

    let mut loss = 0.0f64;
    let mut dmean = DenseArray::zeros(&[batch, adim]);
    let mut dlog_std = vec![0.0f64; adim];
    for i in 0..batch {
        let w = weights[i];
        let mu = mean.row(i);
        let a = actions.row(i);
        let dm = dmean.row_mut(i);
        for d in 0..adim {
            let s = stds[d];
            let inv_sigma = (-s).exp();
            let zn = (a[d] as f64 - mu[d] as f64) * inv_sigma;
            loss += w * (0.5 * zn * zn + s + HALF_LN_2PI);
            dm[d] = (w * -zn * inv_sigma * inv_b) as f32;
            // d/d(log sigma) of (0.5 z^2 + log sigma) = 1 - z^2; zero when
            // the stored parameter is pinned at the clamp boundary.
            let raw = raw_log_std[d] as f64;
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) {
                dlog_std[d] += w * (1.0 - zn * zn) * inv_b;
            }
        }
    }
    loss *= inv_b;
    let mut grads = backward(spec, params, &tape, &dmean, mode)?;
    grads.accumulate(
        "log_std",
        DenseArray::from_vec(&[adim], dlog_std.iter().map(|&g| g as f32).collect())?,
    );
    Ok((loss, grads))
}

/// Mean action for a single observation.
pub fn mean_action(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &[f32],
    label: Option<u8>,
) -> Result<[f32; 2]> {
    let x = DenseArray::from_vec(&[1, obs.len()], obs.to_vec())?;
    let labels = label.map(|z| vec![z]);
    let out = forward_only(spec, params, &x, labels.as_deref(), ExecMode::Sequential)?;
    Ok([out.data()[0], out.data()[1]])
}

/// Log-likelihood of given actions (diagnostics and tests).
pub fn log_probs(
    spec: &MlpSpec,
    params: &ParameterSet,
    obs: &DenseArray,
    labels: Option<&[u8]>,
    actions: &DenseArray,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let (batch, adim) = actions.dims2();
    let mean = forward_only(spec, params, obs, labels, mode)?;
    let stds = log_stds(params, adim)?;
    let mut out = Vec::with_capacity(batch);
    for i in 0..batch {
        let mut lp = 0.0f64;
        for d in 0..adim {
            let s = stds[d];
            let zn = (actions.row(i)[d] as f64 - mean.row(i)[d] as f64) * (-s).exp();
            lp -= 0.5 * zn * zn + s + HALF_LN_2PI;
        }
        out.push(lp);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{adam_step, AdamConfig};
    use crate::seeding::rng_for;
    use rand::RngExt;

    #[test]
    fn unweighted_fit_recovers_the_mean() {
        // Constant-target regression through the likelihood: the policy
        // mean should converge to the data mean.
        let spec = MlpSpec::new(3, &[16], 2);
        let mut params = init_policy(&spec, 5);
        let cfg = AdamConfig::with_learning_rate(3e-3);
        let obs = DenseArray::from_vec(&[4, 3], vec![0.2; 12]).unwrap();
        let actions =
            DenseArray::from_vec(&[4, 2], vec![0.7, -0.3, 0.7, -0.3, 0.7, -0.3, 0.7, -0.3])
                .unwrap();
        let w = vec![1.0; 4];
        for _ in 0..1500 {
            let (_, grads) =
                policy_loss_grads(&spec, &params, &obs, None, &actions, &w, ExecMode::Sequential)
                    .unwrap();
            adam_step(&mut params, &grads, &cfg, 1.0).unwrap();
        }
        let a = mean_action(&spec, &params, &[0.2, 0.2, 0.2], None).unwrap();
        assert!((a[0] - 0.7).abs() < 0.02, "{a:?}");
        assert!((a[1] + 0.3).abs() < 0.02, "{a:?}");
    }

    #[test]
    fn weights_select_among_modes() {
        // Two action clusters; weighting one 10x pulls the mean toward it.
        let spec = MlpSpec::new(1, &[8], 1);
        let mut params = init_policy(&spec, 6);
        let cfg = AdamConfig::with_learning_rate(3e-3);
        let obs = DenseArray::from_vec(&[2, 1], vec![0.0, 0.0]).unwrap();
        let actions = DenseArray::from_vec(&[2, 1], vec![1.0, -1.0]).unwrap();
        let w = vec![10.0, 1.0];
        for _ in 0..2000 {
            let (_, grads) =
                policy_loss_grads(&spec, &params, &obs, None, &actions, &w, ExecMode::Sequential)
                    .unwrap();
            adam_step(&mut params, &grads, &cfg, 1.0).unwrap();
        }
        // Weighted Gaussian MLE: mean = (10*1 + 1*(-1)) / 11.
        let want = (10.0 - 1.0) / 11.0;
        let out = forward_only(&spec, &params, &obs, None, ExecMode::Sequential).unwrap();
        assert!(
            (out.data()[0] as f64 - want).abs() < 0.02,
            "got {}, want {want}",
            out.data()[0]
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec = MlpSpec::new(2, &[6], 2).with_embedding(3, 2);
        let params = init_policy(&spec, 7);
        let mut rng = rng_for(8, "policy-fd");
        let obs = DenseArray::from_vec(
            &[5, 2],
            (0..10).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let actions = DenseArray::from_vec(
            &[5, 2],
            (0..10).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let labels = vec![0u8, 1, 2, 0, 1];
        let weights = vec![0.5, 1.5, 1.0, 2.0, 0.25];
        let (_, grads) = policy_loss_grads(
            &spec,
            &params,
            &obs,
            Some(&labels),
            &actions,
            &weights,
            ExecMode::Sequential,
        )
        .unwrap();
        let eps = 5e-3f32;
        let mut checked = 0;
        for name in ["l0.w", "out.b", "log_std", "emb"] {
            let n = params.get(name).unwrap().len();
            for j in (0..n).step_by(3) {
                let mut plus = params.clone();
                plus.get_mut(name).unwrap().data_mut()[j] += eps;
                let mut minus = params.clone();
                minus.get_mut(name).unwrap().data_mut()[j] -= eps;
                let eval = |p: &ParameterSet| -> f64 {
                    policy_loss_grads(
                        &spec,
                        p,
                        &obs,
                        Some(&labels),
                        &actions,
                        &weights,
                        ExecMode::Sequential,
                    )
                    .unwrap()
                    .0
                };
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * eps as f64);
                let an = grads.get(name).unwrap().data()[j] as f64;
                assert!(
                    (fd - an).abs() < 1e-3 * fd.abs().max(an.abs()).max(0.05),
                    "{name}[{j}]: fd {fd}, analytic {an}"
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }
}
