//! Algebraic least-squares circle fit.
//!
//! Fits a circle by minimizing the algebraic residual
//! `sum_i (||p_i - c||^2 - r^2)^2`, which reduces to a linear 2x2 system in
//! centered coordinates. Exact for points sampled on a true circle; biased
//! toward smaller radii for very noisy arcs, which is acceptable for
//! bucketing radii into coarse categories.

/// A fitted circle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleFit {
    pub center: [f64; 2],
    pub radius: f64,
}

/// Fit a circle to the points. Returns `None` when the points are too few
/// or too close to collinear for the normal equations to be solvable; the
/// caller decides how to bucket that (an arc of near-zero curvature behaves
/// like an infinite radius).
pub fn fit_circle(points: &[[f64; 2]]) -> Option<CircleFit> {
    let n = points.len();
    if n < 3 {
        return None;
    }
    let inv_n = 1.0 / n as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for p in points {
        mx += p[0];
        my += p[1];
    }
    mx *= inv_n;
    my *= inv_n;

    // Centered moments.
    let (mut suu, mut suv, mut svv) = (0.0f64, 0.0f64, 0.0f64);
    let (mut suuu, mut svvv, mut suvv, mut svuu) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for p in points {
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
    // Scale-aware degeneracy test: det has units of length^4.
    let scale = (suu + svv) * inv_n;
    if det.abs() <= 1e-12 * (scale * scale) * (n as f64) * (n as f64) || scale == 0.0 {
        return None;
    }
    let rhs_u = 0.5 * (suuu + suvv);
    let rhs_v = 0.5 * (svvv + svuu);
    let uc = (rhs_u * svv - rhs_v * suv) / det;
    let vc = (rhs_v * suu - rhs_u * suv) / det;
    let radius = (uc * uc + vc * vc + (suu + svv) * inv_n).sqrt();
    Some(CircleFit {
        center: [mx + uc, my + vc],
        radius,
    })
}
