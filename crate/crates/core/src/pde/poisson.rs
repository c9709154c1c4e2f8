//! 1D Poisson equation `u'' + exp(-(x - x0)^2 / (2 sigma_f^2)) = 0` on `[0, 1]`
//! with homogeneous Dirichlet boundary conditions.

use crate::error::{Error, Result};
use crate::netcore::InputJet;

pub const TRUE_X0: f64 = 1.0 / 3.0;
pub const TRUE_SIGMA_F2: f64 = 0.02;

/// Nodes used by the solver when evaluating candidate parameters.
pub const SOLVER_NODES: usize = 1001;

#[inline]
pub(crate) fn source(x: f64, x0: f64, sigma_f2: f64) -> f64 {
    (-(x - x0) * (x - x0) / (2.0 * sigma_f2)).exp()
}

fn check_omega(omega: (f64, f64)) -> Result<()> {
    if !(omega.1 > 0.0) || !omega.0.is_finite() {
        return Err(Error::invalid(format!(
            "poisson parameters need finite x0 and sigma_f2 > 0, got {omega:?}"
        )));
    }
    Ok(())
}

/// `u''(x) + exp(-(x - x0)^2 / (2 sigma_f2))` from the second derivative in `jet`.
pub fn residual_poisson(jet: &InputJet, x: f64, omega: (f64, f64)) -> Result<f64> {
    check_omega(omega)?;
    let u_xx = *jet
        .hess_diag
        .first()
        .ok_or_else(|| Error::invalid("poisson residual needs a 1D jet"))?;
    Ok(u_xx + source(x, omega.0, omega.1))
}

/// Solves the Thomas recurrence for a tridiagonal system. `lower[0]` and
/// `upper[n - 1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n || n == 0 {
        return Err(Error::invalid("tridiagonal band lengths differ"));
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 {
        return Err(Error::numerical("singular tridiagonal system"));
    }
    c[0] = upper[0] / denom;
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::numerical("singular tridiagonal system"));
        }
        c[i] = upper[i] / denom;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    Ok(x)
}

/// Second-order central difference solution on `n_nodes` uniform nodes over `[0, 1]`.
pub fn solve_poisson(omega: (f64, f64), n_nodes: usize) -> Result<Vec<f64>> {
    check_omega(omega)?;
    if n_nodes < 3 {
        return Err(Error::invalid(format!("need at least 3 nodes, got {n_nodes}")));
    }
    let h = 1.0 / (n_nodes - 1) as f64;
    let m = n_nodes - 2;
    // (u_{i-1} - 2 u_i + u_{i+1}) / h^2 = -f_i, written as 2u_i - u_{i-1} - u_{i+1} = h^2 f_i
    let lower = vec![-1.0; m];
    let diag = vec![2.0; m];
    let upper = vec![-1.0; m];
    let rhs: Vec<f64> = (1..=m)
        .map(|i| h * h * source(i as f64 * h, omega.0, omega.1))
        .collect();
    let interior = solve_tridiagonal(&lower, &diag, &upper, &rhs).map_err(|e| match e {
        Error::NumericalFailure { message, .. } => Error::SolverFailure {
            omega: vec![omega.0, omega.1],
            message,
        },
        other => other,
    })?;
    let mut u = Vec::with_capacity(n_nodes);
    u.push(0.0);
    u.extend(interior);
    u.push(0.0);
    Ok(u)
}

/// Linear interpolation of nodal values on a uniform `[0, 1]` grid.
pub fn interpolate_uniform(nodes: &[f64], x: f64) -> f64 {
    let n = nodes.len();
    let pos = (x.clamp(0.0, 1.0)) * (n - 1) as f64;
    let i = (pos.floor() as usize).min(n - 2);
    let w = pos - i as f64;
    nodes[i] * (1.0 - w) + nodes[i + 1] * w
}

/// Solver output at arbitrary points in `[0, 1]`.
pub fn solve_poisson_at(omega: (f64, f64), xs: &[f64]) -> Result<Vec<f64>> {
    let nodes = solve_poisson(omega, SOLVER_NODES)?;
    Ok(xs.iter().map(|&x| interpolate_uniform(&nodes, x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parabola_balances_source_at_centre() {
        let jet = InputJet { value: 0.0, grad: vec![0.0], hess_diag: vec![-1.0] };
        let r = residual_poisson(&jet, 0.4, (0.4, 0.02)).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn source_vanishes_far_away() {
        let jet = InputJet { value: 0.0, grad: vec![0.0], hess_diag: vec![0.0] };
        assert!(residual_poisson(&jet, 50.0, (0.0, 0.02)).unwrap() < 1e-300);
    }

    #[test]
    fn rejects_nonpositive_width() {
        let jet = InputJet { value: 0.0, grad: vec![0.0], hess_diag: vec![0.0] };
        assert!(residual_poisson(&jet, 0.0, (0.3, 0.0)).is_err());
        assert!(solve_poisson((0.3, -1.0), 11).is_err());
        assert!(solve_poisson((0.3, 0.02), 2).is_err());
    }

    #[test]
    fn far_source_gives_zero_solution() {
        let u = solve_poisson((100.0, 1e-4), 101).unwrap();
        assert!(u.iter().all(|v| v.abs() < 1e-300));
    }

    #[test]
    fn tridiagonal_small_system() {
        // [[2,1,0],[1,3,1],[0,1,2]] x = [3,5,3] -> x = [1,1,1]
        let x = solve_tridiagonal(&[0.0, 1.0, 1.0], &[2.0, 3.0, 2.0], &[1.0, 1.0, 0.0], &[3.0, 5.0, 3.0])
            .unwrap();
        for v in x {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn grid_refinement_self_check() {
        let coarse = solve_poisson((1.0 / 3.0, 0.02), 201).unwrap();
        let fine = solve_poisson((1.0 / 3.0, 0.02), 401).unwrap();
        let worst = coarse
            .iter()
            .enumerate()
            .map(|(i, c)| (c - fine[2 * i]).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 1e-4, "{worst}");
    }
}
