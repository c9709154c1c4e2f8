use epinn::pde::{FieldJet, PdeProblem, TRUE_SIGMA_F2, TRUE_X0};
use epinn::priorbuild::*;
use proptest::prelude::*;

fn line(lo: f64, hi: f64, n: usize) -> OmegaGrid {
    OmegaGrid::new(&[(lo, hi)], n).unwrap()
}

fn gauss_logs(grid: &OmegaGrid, mu: f64, var: f64) -> Vec<f64> {
    grid.axis(0).iter().map(|w| -(w - mu) * (w - mu) / (2.0 * var)).collect()
}

proptest! {
    #[test]
    fn densities_are_normalized(logs in proptest::collection::vec(-50.0f64..50.0, 3 * 3 * 3)) {
        let g = OmegaGrid::new(&[(0.0, 1.0), (-2.0, 5.0), (1e-7, 1e-4)], 3).unwrap();
        let f = GridDensity::from_log_values(&g, &logs).unwrap();
        prop_assert!((f.total_mass() - 1.0).abs() <= 1e-9);
        prop_assert!(f.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn kl_is_nonnegative(a in proptest::collection::vec(0.0f64..1.0, 21),
                         b in proptest::collection::vec(0.01f64..1.0, 21)) {
        let g = line(0.0, 1.0, 21);
        prop_assume!(a.iter().sum::<f64>() > 0.0);
        let p = GridDensity::from_values(&g, a).unwrap();
        let q = GridDensity::from_values(&g, b).unwrap();
        prop_assert!(kl_grid(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn invgamma_round_trip(alpha in 1.0001f64..1e3, m in 1e-6f64..1e6) {
        let mode = m * (alpha - 1.0) / (alpha + 1.0);
        let p = invgamma_from_mean_mode(m, mode).unwrap();
        prop_assert!((p.alpha_r - alpha).abs() <= 1e-9 * alpha.max(1.0) / (alpha - 1.0));
        prop_assert!((p.mean() - m).abs() <= 1e-12 * m);
        prop_assert!((p.mode() - mode).abs() <= 1e-12 * m);
    }
}

#[test]
fn invgamma_limit_concentrates() {
    let a = invgamma_from_mean_mode(1.0, 0.999999).unwrap();
    assert!(a.alpha_r > 1e6);
}

#[test]
fn two_node_density_ratio() {
    let g = line(0.0, 1.0, 2);
    // Mbar = 1, so f ∝ (1, e^-1)
    let f = density_from_msd(&[0.0, 2.0], &g).unwrap();
    let ratio = f.values()[1] / f.values()[0];
    assert!((ratio - (-1.0f64).exp()).abs() < 1e-15);
    assert!((f.values()[0] * g.cell_volume() - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
}

#[test]
fn constant_msd_gives_uniform_and_min_gives_max() {
    let g = line(0.0, 1.0, 31);
    let f = density_from_msd(&vec![0.7; 31], &g).unwrap();
    assert!(f.values().iter().all(|v| (v - f.values()[0]).abs() < 1e-12));
    let msd: Vec<f64> = (0..31).map(|k| ((k as f64) - 11.0).abs()).collect();
    let f = density_from_msd(&msd, &g).unwrap();
    assert_eq!(f.argmax().0, 11);
}

#[test]
fn prior_of_discretized_gaussian() {
    let g = OmegaGrid::new(&[(-5.0, 5.0), (0.0, 2.0)], 51).unwrap();
    let var = [1.3, 0.04];
    let f = GridDensity::gaussian(&g, &[0.0, 1.0], &var).unwrap();
    let prior = prior_from_density(&f);
    assert_eq!(prior.mu, vec![0.0, 1.0]);
    for d in 0..2 {
        assert!((prior.sigma2[d] / var[d] - 1.0).abs() < 0.05, "{:?}", prior.sigma2);
    }
}

#[test]
fn prior_of_uniform_density() {
    let g = OmegaGrid::new(&[(0.0, 1.0), (0.01, 0.06)], 51).unwrap();
    let prior = prior_from_density(&GridDensity::uniform(&g));
    // lowest index wins the tie
    assert_eq!(prior.mu, vec![0.0, 0.01]);
    let widths = [1.0, 0.05];
    for d in 0..2 {
        let uniform_var = widths[d] * widths[d] / 12.0;
        assert!((prior.sigma2[d] / uniform_var - 1.0).abs() < 0.05);
    }
}

#[test]
fn prior_of_point_mass() {
    let g = line(0.0, 1.0, 11);
    let mut v = vec![0.0; 11];
    v[4] = 1.0;
    let prior = prior_from_density(&GridDensity::from_values(&g, v).unwrap());
    assert!((prior.mu[0] - 0.4).abs() < 1e-15);
    assert!(prior.sigma2[0] > 0.0 && prior.sigma2[0] < 1e-15);
}

#[test]
fn induced_density_limits_and_scaling() {
    let g = line(0.0, 1.0, 41);
    let s: Vec<f64> = g.axis(0).iter().map(|w| 10.0 * (w - 0.3) * (w - 0.3)).collect();
    let wide = induced_omega_density(&s, 1e12, &g).unwrap();
    let u = GridDensity::uniform(&g);
    assert!(kl_grid(&wide, &u).unwrap() < 1e-10);
    let narrow = induced_omega_density(&s, 1e-9, &g).unwrap();
    assert!((narrow.values()[12] * g.cell_volume() - 1.0).abs() < 1e-12);
    let a = induced_omega_density(&s, 0.2, &g).unwrap();
    let halved: Vec<f64> = s.iter().map(|v| v / 2.0).collect();
    let b = induced_omega_density(&halved, 0.1, &g).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
    }
    assert!(induced_omega_density(&s, 0.0, &g).is_err());
}

#[test]
fn kl_between_unit_gaussians() {
    let g = line(-12.0, 13.0, 2501);
    let p = GridDensity::from_log_values(&g, &gauss_logs(&g, 0.0, 1.0)).unwrap();
    let q = GridDensity::from_log_values(&g, &gauss_logs(&g, 1.0, 1.0)).unwrap();
    let kl = kl_grid(&p, &q).unwrap();
    assert!((kl - 0.5).abs() < 1e-6, "{kl}");
}

fn toy_sums(g: &OmegaGrid) -> Vec<f64> {
    g.axis(0).iter().map(|w| 50.0 * (w - 0.4) * (w - 0.4) + 3.0).collect()
}

#[test]
fn kl_fit_recovers_generating_sigma2() {
    let g = line(0.0, 1.0, 51);
    let s = toy_sums(&g);
    for s0 in [1e-3, 0.05, 2.0] {
        let target = induced_omega_density(&s, s0, &g).unwrap();
        let fit = fit_sigma2_by_kl(&s, &target, &g).unwrap();
        assert!((fit / s0 - 1.0).abs() < 1e-3, "{s0} -> {fit}");
    }
}

#[test]
fn kl_fit_is_local_minimum_and_monotone() {
    let g = line(0.0, 1.0, 51);
    let s = toy_sums(&g);
    let mut last = 0.0;
    for var in [0.001, 0.004, 0.02, 0.05] {
        let target = GridDensity::from_log_values(&g, &gauss_logs(&g, 0.45, var)).unwrap();
        let fit = fit_sigma2_by_kl(&s, &target, &g).unwrap();
        let kl = |x: f64| kl_grid(&induced_omega_density(&s, x, &g).unwrap(), &target).unwrap();
        assert!(kl(fit) <= kl(0.9 * fit) && kl(fit) <= kl(1.1 * fit));
        assert!(fit > last, "fit {fit} not above {last}");
        last = fit;
    }
}

fn poisson_exact(x: f64) -> f64 {
    let p = PdeProblem::poisson();
    p.solve(&[TRUE_X0, TRUE_SIGMA_F2], &[x]).unwrap()[0]
}

#[test]
fn msd_vanishes_at_truth_and_sees_offsets() {
    let problem = PdeProblem::poisson();
    let xs: Vec<f64> = (0..40).map(|k| k as f64 / 39.0).collect();
    let exact: Vec<f64> = xs.iter().map(|&x| poisson_exact(x)).collect();
    let g = OmegaGrid::new(&[(TRUE_X0 - 0.1, TRUE_X0 + 0.1), (0.01, 0.03)], 21).unwrap();
    let m = msd_surface(&exact, &problem, &g, &xs).unwrap();
    let truth = g.nearest_flat(&[TRUE_X0, TRUE_SIGMA_F2]);
    assert!(m[truth] < 1e-20);
    let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(m[truth], min);

    let shifted: Vec<f64> = exact.iter().map(|v| v + 0.1).collect();
    let m2 = msd_surface(&shifted, &problem, &g, &xs).unwrap();
    assert!((m2[truth] - 0.01).abs() < 1e-12);
    assert!(m2.iter().zip(&m).all(|(a, b)| a.is_finite() && *a >= 0.0 && b.is_finite()));
}

#[test]
fn poisson_prior_from_exact_model() {
    let problem = PdeProblem::poisson();
    let grid = OmegaGrid::new(problem.param_bounds(), DEFAULT_POINTS_PER_DIM).unwrap();
    let xs: Vec<f64> = (0..80).map(|k| k as f64 / 79.0).collect();
    let gamma: Vec<f64> = xs.iter().map(|&x| poisson_exact(x)).collect();
    let fields = vec![xs
        .iter()
        .zip(&gamma)
        .map(|(&x, &u)| {
            let src = (-(x - TRUE_X0) * (x - TRUE_X0) / (2.0 * TRUE_SIGMA_F2)).exp();
            FieldJet { value: u, grad: [0.0; 2], hess: [-src, 0.0] }
        })
        .collect::<Vec<_>>()];
    let view = PhaseOneView { data_inputs: &xs, gamma: &gamma, colloc: &xs, fields: &fields };
    let build = build_priors(&view, &problem, &grid).unwrap();
    let mu = &build.omega_prior.mu;
    assert!((mu[0] - TRUE_X0).abs() <= grid.spacing(0), "{mu:?}");
    assert!((mu[1] - TRUE_SIGMA_F2).abs() <= grid.spacing(1), "{mu:?}");
    let r = build.residual_prior;
    assert!(r.sigma2_asy < r.sigma2_ini);
    assert!(r.alpha_r > 1.0 && r.beta_r > 0.0);
    assert!((build.density.total_mass() - 1.0).abs() <= 1e-9);
}

#[test]
fn problem_grid_mismatch_is_rejected() {
    let problem = PdeProblem::poisson();
    let g = line(0.0, 1.0, 5);
    assert!(msd_surface(&[0.0], &problem, &g, &[0.5]).is_err());
}
