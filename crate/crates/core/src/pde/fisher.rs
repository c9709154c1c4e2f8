//! Fisher-KPP equation `u_t = D u_xx + r u (1 - u)` in one space and one time
//! dimension, with the closed-form travelling wave used as the solver.

use crate::error::{Error, Result};

pub const TRUE_R: f64 = 1.6;
pub const TRUE_D: f64 = 6.2;

/// Carrying capacity; the travelling wave saturates at this value.
pub const CARRYING_CAPACITY: f64 = 1.0;

fn check_omega(r: f64, d: f64) -> Result<()> {
    if !(r > 0.0 && d > 0.0) {
        return Err(Error::invalid(format!(
            "fisher parameters must be positive, got r={r}, D={d}"
        )));
    }
    Ok(())
}

/// `u_t - D u_xx - r u (1 - u / K)`.
pub fn residual_fisher(u_t: f64, u_xx: f64, u: f64, omega: (f64, f64)) -> Result<f64> {
    check_omega(omega.0, omega.1)?;
    Ok(residual_unchecked(u_t, u_xx, u, omega.0, omega.1))
}

#[inline]
pub(crate) fn residual_unchecked(u_t: f64, u_xx: f64, u: f64, r: f64, d: f64) -> f64 {
    u_t - d * u_xx - r * u * (1.0 - u / CARRYING_CAPACITY)
}

/// `[1 + exp(sqrt(r / 6D) (x - 5 sqrt(rD) t / sqrt 6))]^-2`.
pub fn fisher_travelling_wave(x: f64, t: f64, r: f64, d: f64) -> f64 {
    let k = (r / (6.0 * d)).sqrt();
    let speed = 5.0 * (r * d).sqrt() / 6f64.sqrt();
    let e = (k * (x - speed * t)).exp();
    let base = 1.0 + e;
    1.0 / (base * base)
}

/// Evaluates the travelling wave at `(x, t)` pairs stored row-major in `pts`.
pub fn solve_fisher(omega: (f64, f64), pts: &[f64]) -> Result<Vec<f64>> {
    check_omega(omega.0, omega.1)?;
    if pts.len() % 2 != 0 {
        return Err(Error::invalid("fisher points must be (x, t) pairs"));
    }
    Ok(pts
        .chunks_exact(2)
        .map(|p| fisher_travelling_wave(p[0], p[1], omega.0, omega.1))
        .collect())
}
