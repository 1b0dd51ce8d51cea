//! Adam optimizer over a [`ParameterSet`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{GradientSet, ParameterSet};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> AdamConfig {
        AdamConfig {
            learning_rate,
            ..AdamConfig::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> AdamConfig {
        AdamConfig {
            learning_rate: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update. `lr_scale` multiplies the learning rate (schedules pass
/// their decay factor here; pass 1.0 for a constant rate).
///
/// Only parameters present in `grads` are updated, but the bias-correction
/// step counter is shared by the whole set and advances once per call.
/// After the update every touched parameter is checked for finiteness; a
/// non-finite value aborts with a divergence error, which is how NaN
/// gradients surface.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &GradientSet,
    config: &AdamConfig,
    lr_scale: f64,
) -> Result<()> {
    let (entries, adam_m, adam_v, step) = params.optimizer_state_mut();
    *step += 1;
    let t = *step;
    let bc1 = 1.0 - config.beta1.powi(t as i32);
    let bc2 = 1.0 - config.beta2.powi(t as i32);
    let lr = config.learning_rate * lr_scale;
    for (name, g) in grads.iter() {
        let p = entries
            .get_mut(name)
            .ok_or_else(|| Error::invalid_argument(format!("gradient for unknown parameter '{name}'")))?;
        if p.shape() != g.shape() {
            return Err(Error::invalid_argument(format!(
                "gradient shape {:?} does not match parameter '{name}' {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = adam_m.get_mut(name).unwrap();
        let v = adam_v.get_mut(name).unwrap();
        for ((pv, gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            let gf = *gv as f64;
            let m_new = config.beta1 * *mv as f64 + (1.0 - config.beta1) * gf;
            let v_new = config.beta2 * *vv as f64 + (1.0 - config.beta2) * gf * gf;
            *mv = m_new as f32;
            *vv = v_new as f32;
            let m_hat = m_new / bc1;
            let v_hat = v_new / bc2;
            *pv = (*pv as f64 - lr * m_hat / (v_hat.sqrt() + config.eps)) as f32;
        }
        if !p.all_finite() {
            return Err(Error::Diverged {
                step: t,
                message: format!("parameter '{name}' became non-finite"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseArray;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction, the first Adam step is lr * g/|g| (eps aside).
        let mut p = ParameterSet::new();
        p.insert("w", DenseArray::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let mut g = GradientSet::new();
        g.accumulate("w", DenseArray::from_vec(&[2], vec![0.3, -20.0]).unwrap());
        let cfg = AdamConfig::with_learning_rate(0.01);
        adam_step(&mut p, &g, &cfg, 1.0).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 0.01)).abs() < 1e-6, "{w:?}");
        assert!((w[1] - (-1.0 + 0.01)).abs() < 1e-6, "{w:?}");
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn quadratic_converges() {
        // Minimize (w - 3)^2 from w = 0.
        let mut p = ParameterSet::new();
        p.insert("w", DenseArray::from_vec(&[1], vec![0.0]).unwrap());
        let cfg = AdamConfig::with_learning_rate(0.05);
        for _ in 0..2000 {
            let w = p.get("w").unwrap().data()[0];
            let mut g = GradientSet::new();
            g.accumulate("w", DenseArray::from_vec(&[1], vec![2.0 * (w - 3.0)]).unwrap());
            adam_step(&mut p, &g, &cfg, 1.0).unwrap();
        }
        assert!((p.get("w").unwrap().data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn nan_gradient_is_a_divergence_error() {
        let mut p = ParameterSet::new();
        p.insert("w", DenseArray::from_vec(&[1], vec![0.0]).unwrap());
        let mut g = GradientSet::new();
        g.accumulate("w", DenseArray::from_vec(&[1], vec![f32::NAN]).unwrap());
        let err = adam_step(&mut p, &g, &AdamConfig::default(), 1.0).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn unknown_gradient_name_is_rejected() {
        let mut p = ParameterSet::new();
        p.insert("w", DenseArray::zeros(&[1]));
        let mut g = GradientSet::new();
        g.accumulate("nope", DenseArray::zeros(&[1]));
        assert!(adam_step(&mut p, &g, &AdamConfig::default(), 1.0).is_err());
    }
}
