//! Cross-checks of the numeric building blocks against slower, independently
//! written references: central finite differences for the backward pass,
//! bisection for expectiles, tabular dynamic programming for the value
//! learner, synthetic arcs for the circle fitter, closed-form identities for
//! the advantage gate, and a naive per-timestep re-labeling of generated
//! trajectories. Every check returns its worst-case gap (or mismatch count)
//! so callers decide the tolerance; the unit tests here pin the ones the
//! rest of the crate relies on.

use rand::RngExt;

use crate::agents::{gate, ValueLearner};
use crate::data::{GenVariant, Trajectory};
use crate::env::scripted::{generate_dataset, GenConfig};
use crate::env::EnvConfig;
use crate::labeling::{label_trajectory, CriterionId};
use crate::nn::{
    backward, expectile_grad, forward, forward_only, init_params, AdamConfig, MlpSpec,
    ParameterSet,
};
use crate::seeding::rng_for;
use crate::tensor::DenseArray;
use crate::{ExecMode, Result};

/// Worst relative error between analytic gradients and central finite
/// differences, over every parameter tensor of a frozen network that uses
/// every architectural feature at once (hidden stack, layer norm, label
/// embedding). The error is measured per tensor as
/// `||fd - analytic|| / max(||fd||, ||analytic||)` and the maximum over
/// tensors is returned.
pub fn fd_gradient_max_rel_err() -> Result<f64> {
    let mode = ExecMode::Sequential;
    let spec = MlpSpec::new(6, &[8, 6], 3).with_layer_norm().with_embedding(4, 5);
    let batch = 4usize;
    let labels: Vec<u8> = (0..batch).map(|i| (i % 4) as u8).collect();
    let eps = 1e-2f32;

    // Central differences straddle ReLU kinks, so probe at a point whose
    // pre-activations all clear zero by several step sizes. The first
    // qualifying trial is used, keeping the check deterministic.
    let mut chosen = None;
    for trial in 0..500u64 {
        let params = init_params(&spec, 0xD1A6_0000 + trial);
        let mut rng = rng_for(trial, "fd-inputs");
        let obs_data: Vec<f32> =
            (0..batch * 6).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let obs = DenseArray::from_vec(&[batch, 6], obs_data)?;
        let (_, tape) = forward(&spec, &params, &obs, Some(&labels), mode)?;
        if tape.relu_margin() > 5.0 * eps {
            let coeff: Vec<f32> =
                (0..batch * 3).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            chosen = Some((params, obs, coeff, tape));
            break;
        }
    }
    let Some((mut params, obs, coeff, tape)) = chosen else {
        return Err(crate::Error::invalid_argument(
            "no kink-free probe point found for the gradient check",
        ));
    };

    // Scalar probe loss `sum_ij c_ij * out_ij` with fixed coefficients, so
    // its exact output gradient is just `c`.
    let dout = DenseArray::from_vec(&[batch, 3], coeff.clone())?;
    let loss = |params: &ParameterSet| -> Result<f64> {
        let out = forward_only(&spec, params, &obs, Some(&labels), mode)?;
        Ok(out
            .data()
            .iter()
            .zip(&coeff)
            .map(|(o, c)| *o as f64 * *c as f64)
            .sum())
    };

    let analytic = backward(&spec, &params, &tape, &dout, mode)?;

    let names: Vec<String> = params.names().map(str::to_owned).collect();
    let mut worst = 0.0f64;
    for name in &names {
        let an: Vec<f64> = match analytic.get(name) {
            Some(g) => g.data().iter().map(|v| *v as f64).collect(),
            None => continue,
        };
        let len = params.get(name)?.data().len();
        let mut fd = vec![0.0f64; len];
        for j in 0..len {
            let old = params.get(name)?.data()[j];
            // Divide by the realized f32 step, not the nominal one.
            let hi = old + eps;
            let lo = old - eps;
            params.get_mut(name)?.data_mut()[j] = hi;
            let l_hi = loss(&params)?;
            params.get_mut(name)?.data_mut()[j] = lo;
            let l_lo = loss(&params)?;
            params.get_mut(name)?.data_mut()[j] = old;
            fd[j] = (l_hi - l_lo) / (hi as f64 - lo as f64);
        }
        let gap = fd
            .iter()
            .zip(&an)
            .map(|(f, a)| (f - a) * (f - a))
            .sum::<f64>()
            .sqrt();
        let fd_norm = fd.iter().map(|f| f * f).sum::<f64>().sqrt();
        let an_norm = an.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(gap / fd_norm.max(an_norm).max(1e-9));
    }
    Ok(worst)
}

/// `kappa`-expectile of a sample set by bisection on its first-order
/// balance condition `kappa * E[(x - m)+] = (1 - kappa) * E[(m - x)+]`,
/// which defines the expectile without reference to any gradient code.
pub fn scalar_expectile(samples: &[f64], kappa: f64) -> f64 {
    let mut lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let balance: f64 = samples
            .iter()
            .map(|x| kappa * (x - mid).max(0.0) - (1.0 - kappa) * (mid - x).max(0.0))
            .sum();
        if balance > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Worst gap between gradient descent with the training-side expectile
/// gradient and the bisection oracle, over a few fixed sample sets, two
/// seeded random ones, and a spread of asymmetry levels.
pub fn expectile_vs_bisection_max_gap() -> f64 {
    let mut sets: Vec<Vec<f64>> = vec![
        vec![-1.0, 0.0, 1.0, 2.0, 5.0],
        vec![0.2, 1.0],
        vec![-3.0, -2.9, -0.5, 4.0, 4.1, 4.2, 10.0],
    ];
    let mut rng = rng_for(17, "expectile-samples");
    sets.push((0..40).map(|_| rng.random_range(-2.0f64..3.0)).collect());
    sets.push(
        (0..25)
            .map(|_| (3.0 * rng.random_range(0.0f64..1.0)).exp() - 2.0)
            .collect(),
    );

    let mut worst = 0.0f64;
    for samples in &sets {
        for &kappa in &[0.55, 0.7, 0.9] {
            let oracle = scalar_expectile(samples, kappa);
            // The mean loss has curvature at most 2*kappa < 2, so a 0.4
            // step size contracts on every linear piece.
            let mut m = samples.iter().sum::<f64>() / samples.len() as f64;
            for _ in 0..4000 {
                let g: f64 = samples
                    .iter()
                    .map(|x| expectile_grad(x - m, kappa))
                    .sum::<f64>()
                    / samples.len() as f64;
                m += 0.4 * g;
            }
            worst = worst.max((m - oracle).abs());
        }
    }
    worst
}

/// Gaps between the value learner's fitted `V`/`Q` and a tabular fixed
/// point on a three-state chain where one state has two observed actions,
/// so the expectile (not the mean) decides its value. The tabular side uses
/// [`scalar_expectile`], sharing nothing with the network path.
pub struct ChainGaps {
    pub v_gap: f64,
    pub q_gap: f64,
}

pub fn chain_value_gaps() -> Result<ChainGaps> {
    let gamma = 0.9;
    let kappa = 0.7;
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
    )?;
    let obs_act = DenseArray::from_vec(
        &[4, 4],
        vec![
            1.0, 0.0, 0.0, -1.0, //
            1.0, 0.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 0.0,
        ],
    )?;
    let next_obs = DenseArray::from_vec(
        &[4, 3],
        vec![
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ],
    )?;
    let rewards: [f64; 4] = [0.0, 0.0, 0.2, 1.0];
    let done: [f32; 4] = [0.0, 0.0, 1.0, 1.0];

    let (mut v0, mut v1, mut v2) = (0.0f64, 0.0, 0.0);
    for _ in 0..300 {
        let q0a = gamma * v1;
        let q0b = gamma * v2;
        v1 = 0.2;
        v2 = 1.0;
        v0 = scalar_expectile(&[q0a, q0b], kappa);
    }
    let v_dp = [v0, v1, v2];
    let q_dp = [gamma * v1, gamma * v2, 0.2, 1.0];

    let v_spec = MlpSpec::new(3, &[24, 24], 1).with_layer_norm();
    let q_spec = MlpSpec::new(4, &[24, 24], 1);
    let mut learner = ValueLearner::new(v_spec.clone(), q_spec.clone(), 23);
    let adam = AdamConfig::with_learning_rate(3e-3);
    for _ in 0..6000 {
        learner.step(
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
        )?;
    }
    let v_net = forward_only(&v_spec, &learner.v, &obs, None, ExecMode::Sequential)?;
    let q_net = forward_only(&q_spec, &learner.q, &obs_act, None, ExecMode::Sequential)?;
    let v_got = [
        v_net.data()[0] as f64,
        v_net.data()[2] as f64,
        v_net.data()[3] as f64,
    ];
    let v_gap = v_got
        .iter()
        .zip(&v_dp)
        .map(|(g, w)| (g - w).abs())
        .fold(0.0f64, f64::max);
    let q_gap = (0..4)
        .map(|i| (q_net.data()[i] as f64 - q_dp[i]).abs())
        .fold(0.0f64, f64::max);
    Ok(ChainGaps { v_gap, q_gap })
}

/// Worst relative recovery error of the circle fitter over a grid of exact
/// synthetic circles crossed with arc spans from a full loop down to the
/// same 30-degree sliver the fitter sees on near-straight windows. Returns
/// infinity if any fit degenerates.
pub fn circle_fit_max_rel_err() -> f64 {
    let circles: [(f64, f64, f64); 4] = [
        (0.0, 0.0, 0.5),
        (3.0, -2.0, 7.0),
        (-10.0, 25.0, 2.0),
        (8.0, 1.0, 40.0),
    ];
    let arcs: [(f64, f64, usize); 4] = [
        (0.0, std::f64::consts::TAU, 60),
        (0.7, 2.5, 40),
        (-1.2, 1.2, 30),
        (0.3, 0.5236, 51),
    ];
    let mut worst = 0.0f64;
    for &(cx, cy, r) in &circles {
        for &(start, span, n) in &arcs {
            let points: Vec<[f64; 2]> = (0..n)
                .map(|i| {
                    let a = start + span * i as f64 / (n - 1) as f64;
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect();
            let Some(fit) = crate::labeling::circle_fit::fit_circle(&points) else {
                return f64::INFINITY;
            };
            let center_err =
                ((fit.center[0] - cx).powi(2) + (fit.center[1] - cy).powi(2)).sqrt();
            worst = worst.max((fit.radius - r).abs().max(center_err) / r);
        }
    }
    worst
}

/// Worst violation of the advantage-gate identities that hold exactly in
/// IEEE arithmetic: a zero secondary passes the primary through; a zero
/// primary halves the secondary; at `±40` the sigmoid saturates to exactly
/// one/zero so the gate collapses to `p + s` / `p`; and the gate is
/// monotone in the secondary everywhere and in the primary wherever its
/// slope `1 + sigmoid'(p) * s` stays positive.
pub fn gate_identity_gaps() -> f64 {
    let grid: Vec<f64> = (-40..=40).map(|i| i as f64 * 0.25).collect();
    let mut worst = 0.0f64;
    for &p in &grid {
        worst = worst.max((gate(p, 0.0) - p).abs());
    }
    for &s in &grid {
        worst = worst.max((gate(0.0, s) - 0.5 * s).abs());
        worst = worst.max((gate(40.0, s) - (40.0 + s)).abs());
        worst = worst.max((gate(-40.0, s) - (-40.0)).abs());
    }
    for &p in &grid {
        for pair in grid.windows(2) {
            worst = worst.max((gate(p, pair[0]) - gate(p, pair[1])).max(0.0));
        }
    }
    for &s in &grid {
        if s.abs() <= 3.5 {
            for pair in grid.windows(2) {
                worst = worst.max((gate(pair[0], s) - gate(pair[1], s)).max(0.0));
            }
        }
    }
    worst
}

/// Count of label disagreements between the production labelers and
/// [`naive_label`] over `n_trajectories` freshly generated scripted
/// episodes (half circling in place, half navigating out first), across
/// all criteria and timesteps.
pub fn labeling_reference_mismatches(
    n_trajectories: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<usize> {
    let env = EnvConfig {
        horizon: 400,
        ..EnvConfig::default()
    };
    let half = n_trajectories / 2;
    let mut episodes = Vec::with_capacity(n_trajectories);
    for (variant, count, salt) in [
        (GenVariant::Inplace, half, 0u64),
        (GenVariant::Navigate, n_trajectories - half, 1),
    ] {
        let config = GenConfig {
            env,
            variant,
            n_episodes: count,
            seed: seed.wrapping_add(salt),
        };
        episodes.extend(generate_dataset(&config, mode)?.episodes);
    }

    let mut mismatches = 0usize;
    for traj in &episodes {
        for criterion in CriterionId::all() {
            let fast = label_trajectory(criterion, traj);
            for (t, got) in fast.iter().enumerate() {
                if *got != naive_label(criterion, traj, t) {
                    mismatches += 1;
                }
            }
        }
    }
    Ok(mismatches)
}

/// Straight-line re-derivation of one label, reading the raw pose triplets
/// and redoing every window bound, wrap, moment, and bin inline. It shares
/// no helpers with the labeling module; arithmetic is kept in the same
/// order so agreement is exact, not approximate.
pub fn naive_label(criterion: CriterionId, traj: &Trajectory, t: usize) -> u8 {
    use std::f64::consts::PI;

    let wrap = |theta: f64| -> f64 {
        let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
        if w >= PI {
            w - 2.0 * PI
        } else {
            w
        }
    };
    // Transitions per episode; poses run one longer.
    let n_trans = traj.triplets.len() - 1;
    let heading_diff =
        |k: usize| -> f64 { wrap(traj.triplets[k + 1][2] as f64 - traj.triplets[k][2] as f64) };

    match criterion {
        CriterionId::Position => {
            let x = traj.triplets[t][0] as f64;
            let y = traj.triplets[t][1] as f64;
            let w = (30.0 - (-30.0)) / 4.0;
            let xb = ((x - (-30.0)) / w).floor().clamp(0.0, 3.0) as u8;
            let yb = if y < 0.0 { 0u8 } else { 1u8 };
            yb * 4 + xb
        }
        CriterionId::MovementDirection => {
            let dx = (traj.triplets[t + 1][0] - traj.triplets[t][0]) as f64;
            let dy = (traj.triplets[t + 1][1] - traj.triplets[t][1]) as f64;
            if (dx * dx + dy * dy).sqrt() < 0.1 {
                return 8;
            }
            let angle = wrap(dy.atan2(dx));
            let w = (PI - (-PI)) / 8.0;
            ((angle - (-PI)) / w).floor().clamp(0.0, 7.0) as u8
        }
        CriterionId::TurnDirection => {
            let lo = if t >= 5 { t - 5 } else { 0 };
            let hi = (t + 5 - 1).min(n_trans - 1);
            let mut sum = 0.0;
            for k in lo..=hi {
                sum += heading_diff(k);
            }
            let mean = sum / (hi - lo + 1) as f64;
            if mean.abs() < 0.1 {
                2
            } else if mean > 0.0 {
                1
            } else {
                0
            }
        }
        CriterionId::RadiusCategory => {
            let lo = if t >= 5 { t - 5 } else { 0 };
            let hi = (t + 5 - 1).min(n_trans - 1);
            let mut sum_abs = 0.0;
            for k in lo..=hi {
                sum_abs += heading_diff(k).abs();
            }
            if sum_abs / ((hi - lo + 1) as f64) < 0.1 {
                return 3;
            }
            let lo = if t >= 25 { t - 25 } else { 0 };
            let hi = (t + 25).min(n_trans);
            let points: Vec<[f64; 2]> = (lo..=hi)
                .map(|k| [traj.triplets[k][0] as f64, traj.triplets[k][1] as f64])
                .collect();
            // Algebraic circle fit, redone from the normal equations.
            let n = points.len();
            if n < 3 {
                return 2;
            }
            let inv_n = 1.0 / n as f64;
            let mut mx = 0.0;
            let mut my = 0.0;
            for p in &points {
                mx += p[0];
                my += p[1];
            }
            mx *= inv_n;
            my *= inv_n;
            let (mut suu, mut suv, mut svv) = (0.0f64, 0.0f64, 0.0f64);
            let (mut suuu, mut svvv, mut suvv, mut svuu) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            for p in &points {
                let u = p[0] - mx;
                let v = p[1] - my;
                suu += u * u;
                suv += u * v;
                svv += v * v;
                suuu += u * u * u;
                svvv += v * v * v;
                suvv += u * v * v;
                svuu += v * u * u;
            }
            let det = suu * svv - suv * suv;
            let scale = (suu + svv) * inv_n;
            if det.abs() <= 1e-12 * (scale * scale) * (n as f64) * (n as f64) || scale == 0.0 {
                return 2;
            }
            let rhs_u = 0.5 * (suuu + suvv);
            let rhs_v = 0.5 * (svvv + svuu);
            let uc = (rhs_u * svv - rhs_v * suv) / det;
            let vc = (rhs_v * suu - rhs_u * suv) / det;
            let radius = (uc * uc + vc * vc + (suu + svv) * inv_n).sqrt();
            let w = (11.0 - 2.0) / 3.0;
            ((radius - 2.0) / w).floor().clamp(0.0, 2.0) as u8
        }
        CriterionId::SpeedCategory => {
            let dx = (traj.triplets[t + 1][0] - traj.triplets[t][0]) as f64;
            let dy = (traj.triplets[t + 1][1] - traj.triplets[t][1]) as f64;
            let w = (3.0 - 0.5) / 3.0;
            (((dx * dx + dy * dy).sqrt() - 0.5) / w).floor().clamp(0.0, 2.0) as u8
        }
        CriterionId::CurvatureNoise => {
            let lo = if t >= 25 { t - 25 } else { 0 };
            let hi = (t + 25 - 1).min(n_trans - 1);
            let diffs: Vec<f64> = (lo..=hi).map(heading_diff).collect();
            if diffs.len() < 3 {
                return 0;
            }
            let mut second = Vec::with_capacity(diffs.len() - 1);
            for i in 1..diffs.len() {
                second.push(diffs[i] - diffs[i - 1]);
            }
            let mut sum = 0.0;
            for s in &second {
                sum += *s;
            }
            let mean = sum / second.len() as f64;
            let mut var = 0.0;
            for s in &second {
                var += (*s - mean) * (*s - mean);
            }
            let var = var / second.len() as f64;
            let w = (0.8 - 0.0) / 3.0;
            ((var.sqrt() - 0.0) / w).floor().clamp(0.0, 2.0) as u8
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_pass_matches_finite_differences() {
        let err = fd_gradient_max_rel_err().unwrap();
        assert!(err < 1e-3, "max relative gradient error {err}");
    }

    #[test]
    fn descent_expectiles_match_bisection() {
        // Two-point closed form pins the oracle itself before the oracle
        // pins the descent path.
        let m = scalar_expectile(&[0.2, 1.0], 0.7);
        assert!((m - (0.7 * 1.0 + 0.3 * 0.2)).abs() < 1e-9, "two-point expectile {m}");
        let gap = expectile_vs_bisection_max_gap();
        assert!(gap < 1e-3, "worst expectile gap {gap}");
    }

    #[test]
    fn chain_learner_matches_tabular_dp() {
        let gaps = chain_value_gaps().unwrap();
        assert!(gaps.v_gap < 5e-2, "V gap {}", gaps.v_gap);
        assert!(gaps.q_gap < 5e-2, "Q gap {}", gaps.q_gap);
    }

    #[test]
    fn circle_fits_are_exact_on_synthetic_arcs() {
        let err = circle_fit_max_rel_err();
        assert!(err < 1e-6, "worst circle recovery error {err}");
    }

    #[test]
    fn gate_identities_are_exact() {
        assert_eq!(gate_identity_gaps(), 0.0);
    }

    #[test]
    fn labelers_match_naive_reference() {
        let mismatches = labeling_reference_mismatches(100, 91, ExecMode::Sequential).unwrap();
        assert_eq!(mismatches, 0, "label mismatches against the naive reference");
    }
}
