//! Scalar loss pieces: the expectile loss and the cosine decay factor.

use crate::error::{Error, Result};

/// Validate an expectile level. The asymmetric regression is defined here
/// for `kappa` in `[0.5, 1)`: 0.5 recovers symmetric least squares and
/// values approaching 1 push the regression toward an upper envelope.
pub fn check_kappa(kappa: f64) -> Result<()> {
    if !(0.5..1.0).contains(&kappa) {
        return Err(Error::invalid_argument(format!(
            "expectile level must lie in [0.5, 1), got {kappa}"
        )));
    }
    Ok(())
}

/// Asymmetric squared loss `|kappa - 1{u < 0}| * u^2` on a residual `u`.
#[inline]
pub fn expectile_loss(u: f64, kappa: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - kappa } else { kappa };
    w * u * u
}

/// Derivative of [`expectile_loss`] with respect to `u`.
#[inline]
pub fn expectile_grad(u: f64, kappa: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - kappa } else { kappa };
    2.0 * w * u
}

/// Cosine decay factor at `step` of `total` steps: starts at 1, ends at 0.
/// Steps past `total` stay at 0.
pub fn cosine_factor(step: u64, total: u64) -> f64 {
    if total == 0 {
        return 1.0;
    }
    let frac = (step.min(total) as f64) / total as f64;
    0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_domain() {
        assert!(check_kappa(0.5).is_ok());
        assert!(check_kappa(0.7).is_ok());
        assert!(check_kappa(0.999).is_ok());
        assert!(check_kappa(1.0).is_err());
        assert!(check_kappa(0.49).is_err());
        assert!(check_kappa(f64::NAN).is_err());
    }

    #[test]
    fn loss_is_asymmetric() {
        // kappa = 0.7: positive residuals cost 0.7 u^2, negative 0.3 u^2.
        assert!((expectile_loss(2.0, 0.7) - 2.8).abs() < 1e-12);
        assert!((expectile_loss(-2.0, 0.7) - 1.2).abs() < 1e-12);
        // kappa = 0.5 reduces to half of squared error on both sides.
        assert_eq!(expectile_loss(3.0, 0.5), expectile_loss(-3.0, 0.5));
    }

    #[test]
    fn grad_matches_finite_difference() {
        for &u in &[-1.5, -0.3, 0.4, 2.0] {
            let eps = 1e-6;
            let fd = (expectile_loss(u + eps, 0.7) - expectile_loss(u - eps, 0.7)) / (2.0 * eps);
            assert!((fd - expectile_grad(u, 0.7)).abs() < 1e-6, "u={u}");
        }
    }

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_factor(0, 100), 1.0);
        assert!((cosine_factor(50, 100) - 0.5).abs() < 1e-12);
        assert!(cosine_factor(100, 100).abs() < 1e-12);
        assert!(cosine_factor(150, 100).abs() < 1e-12);
        assert_eq!(cosine_factor(5, 0), 1.0);
    }
}
