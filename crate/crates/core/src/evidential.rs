//! Evidential regression heads and the Student-t marginal they induce.
//!
//! The four heads `(gamma, nu, alpha, beta)` parameterise a normal-inverse-gamma
//! prior; marginalising it gives a Student-t with `2 alpha` degrees of freedom,
//! location `gamma` and squared scale `beta (1 + nu) / (nu alpha)`.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::stats::{normal_quantile, student_t_quantile};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidentialOutput {
    pub gamma: f64,
    pub nu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl EvidentialOutput {
    pub fn new(gamma: f64, nu: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(nu > 0.0 && alpha > 1.0 && beta > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "evidential output requires nu > 0, alpha > 1, beta > 0 (got nu={nu}, alpha={alpha}, beta={beta})"
            )));
        }
        Ok(EvidentialOutput { gamma, nu, alpha, beta })
    }

    /// Degrees of freedom of the marginal Student-t.
    pub fn dof(&self) -> f64 {
        2.0 * self.alpha
    }

    /// Scale of the marginal Student-t, `sqrt(beta (1 + nu) / (nu alpha))`.
    pub fn t_scale(&self) -> f64 {
        (self.beta * (1.0 + self.nu) / (self.nu * self.alpha)).sqrt()
    }
}

/// Numerically stable `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function, the derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive arguments.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Maps four unconstrained network outputs onto valid heads.
pub fn constrain_heads(raw: [f64; 4]) -> EvidentialOutput {
    EvidentialOutput {
        gamma: raw[0],
        nu: softplus(raw[1]).max(f64::MIN_POSITIVE),
        alpha: 1.0 + softplus(raw[2]).max(f64::EPSILON),
        beta: softplus(raw[3]).max(f64::MIN_POSITIVE),
    }
}

/// Negative log of the Student-t marginal density at `y`.
pub fn nll(out: &EvidentialOutput, y: f64) -> f64 {
    let w = 2.0 * out.beta * (1.0 + out.nu) / out.nu;
    let r = y - out.gamma;
    ln_gamma(out.alpha) - ln_gamma(out.alpha + 0.5)
        + 0.5 * (std::f64::consts::PI * w).ln()
        + (out.alpha + 0.5) * (r * r / w).ln_1p()
}

/// [`nll`] together with its partial derivatives with respect to
/// `(gamma, nu, alpha, beta)`.
pub fn nll_with_grad(out: &EvidentialOutput, y: f64) -> (f64, [f64; 4]) {
    let EvidentialOutput { gamma, nu, alpha, beta } = *out;
    let w = 2.0 * beta * (1.0 + nu) / nu;
    let r = y - gamma;
    let q = r * r;
    let log_term = (q / w).ln_1p();
    let value = ln_gamma(alpha) - ln_gamma(alpha + 0.5)
        + 0.5 * (std::f64::consts::PI * w).ln()
        + (alpha + 0.5) * log_term;
    let d_gamma = -(2.0 * alpha + 1.0) * r / (w + q);
    let d_w = 0.5 / w - (alpha + 0.5) * q / (w * (w + q));
    let d_nu = d_w * (-2.0 * beta / (nu * nu));
    let d_beta = d_w * 2.0 * (1.0 + 1.0 / nu);
    let d_alpha = digamma(alpha) - digamma(alpha + 0.5) + log_term;
    (value, [d_gamma, d_nu, d_alpha, d_beta])
}

/// Total predictive variance `beta / (alpha - 1) * (1 + 1 / nu)`.
pub fn predictive_variance(out: &EvidentialOutput) -> Result<f64> {
    if !(out.alpha > 1.0) {
        return Err(Error::invalid(format!(
            "predictive variance needs alpha > 1, got {}",
            out.alpha
        )));
    }
    Ok(out.beta / (out.alpha - 1.0) * (1.0 + 1.0 / out.nu))
}

/// Central interval holding probability `level` under the Student-t marginal.
pub fn predictive_interval(out: &EvidentialOutput, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("interval level {level} outside (0, 1)")));
    }
    let q = student_t_quantile(0.5 + 0.5 * level, out.dof())?;
    let half = q * out.t_scale();
    Ok((out.gamma - half, out.gamma + half))
}

/// Gaussian approximation `gamma ± z sigma_p` using the predictive variance.
pub fn gaussian_interval(out: &EvidentialOutput, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("interval level {level} outside (0, 1)")));
    }
    let z = normal_quantile(0.5 + 0.5 * level)?;
    let half = z * predictive_variance(out)?.sqrt();
    Ok((out.gamma - half, out.gamma + half))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn out(gamma: f64, nu: f64, alpha: f64, beta: f64) -> EvidentialOutput {
        EvidentialOutput::new(gamma, nu, alpha, beta).unwrap()
    }

    #[test]
    fn zero_raw_heads() {
        let o = constrain_heads([0.0; 4]);
        assert_eq!(o.gamma, 0.0);
        assert!((o.nu - LN_2).abs() < 1e-15);
        assert!((o.alpha - (1.0 + LN_2)).abs() < 1e-15);
        assert!((o.beta - LN_2).abs() < 1e-15);
    }

    #[test]
    fn alpha_limits() {
        assert!(constrain_heads([0.0, 0.0, 500.0, 0.0]).alpha > 400.0);
        let low = constrain_heads([0.0, 0.0, -500.0, 0.0]).alpha;
        assert!(low > 1.0 && low - 1.0 < 1e-15);
    }

    #[test]
    fn nll_reference_value() {
        // -log[Gamma(2.5) / (Gamma(2) sqrt(4 pi))]
        let v = nll(&out(0.0, 1.0, 2.0, 1.0), 0.0);
        let expected = -(1.329_340_388_179_137_f64 / (4.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.9808).abs() < 1e-4);
    }

    #[test]
    fn nll_is_even_around_gamma() {
        let o = out(0.7, 0.3, 3.2, 0.4);
        for d in [0.01, 0.5, 3.0] {
            assert!((nll(&o, 0.7 + d) - nll(&o, 0.7 - d)).abs() < 1e-12);
            assert!(nll(&o, 0.7 + d) > nll(&o, 0.7));
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let o = out(0.2, 0.7, 2.3, 0.45);
        let y = 1.1;
        let (_, g) = nll_with_grad(&o, y);
        let h = 1e-6;
        let fields: [fn(&mut EvidentialOutput) -> &mut f64; 4] = [
            |o| &mut o.gamma,
            |o| &mut o.nu,
            |o| &mut o.alpha,
            |o| &mut o.beta,
        ];
        for (k, f) in fields.iter().enumerate() {
            let mut p = o;
            *f(&mut p) += h;
            let mut m = o;
            *f(&mut m) -= h;
            let fd = (nll(&p, y) - nll(&m, y)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-7 * fd.abs().max(1.0), "head {k}");
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(predictive_variance(&out(0.0, 1.0, 2.0, 1.0)).unwrap(), 2.0);
        let big_nu = predictive_variance(&out(0.0, 1e12, 3.0, 1.0)).unwrap();
        assert!((big_nu - 0.5).abs() < 1e-10);
        let bad = EvidentialOutput { gamma: 0.0, nu: 1.0, alpha: 1.0, beta: 1.0 };
        assert!(predictive_variance(&bad).is_err());
    }

    #[test]
    fn intervals_nest_and_collapse() {
        let o = out(1.0, 0.5, 2.5, 0.3);
        let (a, b) = predictive_interval(&o, 0.5).unwrap();
        let (c, d) = predictive_interval(&o, 0.9).unwrap();
        assert!(c < a && b < d);
        let (lo, hi) = predictive_interval(&o, 1e-12).unwrap();
        assert!((hi - lo).abs() < 1e-9 && (lo - 1.0).abs() < 1e-9);
        assert!(predictive_interval(&o, 0.0).is_err());
        assert!(predictive_interval(&o, 1.0).is_err());
        let (g0, g1) = gaussian_interval(&o, 0.9).unwrap();
        assert!(g0 < 1.0 && g1 > 1.0);
    }
}
