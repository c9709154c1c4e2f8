//! Student-t and normal distribution helpers built on the regularized
//! incomplete beta function.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Upper-tail probability `P(T > t)` of the standard Student-t distribution.
///
/// Uses whichever incomplete-beta form avoids cancellation: near zero the tail is
/// `1/2 - I_{t^2/(v+t^2)}(1/2, v/2) / 2`, far out it is `I_{v/(v+t^2)}(v/2, 1/2) / 2`.
pub fn student_t_sf(t: f64, dof: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t < 0.0 {
        return 1.0 - student_t_sf(-t, dof);
    }
    if t == f64::INFINITY {
        return 0.0;
    }
    let t2 = t * t;
    if t2 < dof {
        0.5 - 0.5 * beta_reg(0.5, 0.5 * dof, t2 / (dof + t2))
    } else {
        0.5 * beta_reg(0.5 * dof, 0.5, dof / (dof + t2))
    }
}

/// CDF of the standard Student-t distribution with `dof` degrees of freedom.
pub fn student_t_cdf(t: f64, dof: f64) -> f64 {
    student_t_sf(-t, dof)
}

/// Quantile of the standard Student-t distribution, found by bracketing and
/// bisection on [`student_t_cdf`] to an absolute tolerance of `1e-10`
/// (relative for large quantiles).
pub fn student_t_quantile(p: f64, dof: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    if !(dof > 0.0) {
        return Err(Error::invalid(format!("degrees of freedom {dof} must be positive")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p < 0.5 {
        return student_t_quantile(1.0 - p, dof).map(|q| -q);
    }
    // upper half: search t > 0 with sf(t) = 1 - p
    let target = 1.0 - p;
    let mut hi = 1.0;
    while student_t_sf(hi, dof) > target {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::numerical("student-t quantile bracket overflow"));
        }
    }
    let mut lo = 0.0;
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if student_t_sf(mid, dof) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level {p} outside (0, 1)")));
    }
    Ok(Normal::standard().inverse_cdf(p))
}
