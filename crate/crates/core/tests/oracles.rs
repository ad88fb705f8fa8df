//! Closed forms computed independently of the library's own quadrature.

use ebsde_core::dynamics::{gibbs_expectation, invariant_density};
use ebsde_core::verification::pde_residual;
use ebsde_core::{
    check_all, solve_discounted, solve_ergodic, CheckSettings, DomainSpec, DriverSpec, ErgodicScheme, ErgodicSettings,
    GridFunction, GridSpec, Potential, SdeModel, SolverSettings,
};

/// Maclaurin series, plenty for |x| < 1.
fn erf(x: f64) -> f64 {
    let mut term = x;
    let mut sum = x;
    for n in 1..60 {
        term *= -x * x / n as f64;
        sum += term / (2 * n + 1) as f64;
    }
    2.0 / std::f64::consts::PI.sqrt() * sum
}

fn kolmogorov() -> SdeModel<f64> {
    SdeModel::kolmogorov(Potential::quadratic(1.0), 1)
}

// ∫_{-1}^{1} e^{-x²/2} = √(2π) erf(1/√2); integrating x² e^{-x²/2} by parts
// gives E[1 - x²] = 2e^{-1/2} / N.
#[test]
fn gibbs_normalization_and_local_time_rate() {
    let n = (2.0 * std::f64::consts::PI).sqrt() * erf(std::f64::consts::FRAC_1_SQRT_2);
    assert!((n - 1.7112487837842973).abs() < 1e-13, "{n}");
    let rate = 2.0 * (-0.5f64).exp() / n;
    assert!((rate - 0.7088749052272069).abs() < 1e-13, "{rate}");

    let m = kolmogorov();
    let d = DomainSpec::interval(1.0);
    let q = -gibbs_expectation(&m, &d, &|x: &[f64]| m.l_phi(&d, x), 4097).unwrap();
    assert!((q - rate).abs() < 1e-10, "{q}");
    let dens = invariant_density(&m, &d, 4097).unwrap();
    assert!((dens.normalization - n).abs() < 1e-10);
}

#[test]
fn degenerate_example_cubic() {
    let m: SdeModel<f64> = SdeModel::degenerate_diagonal(1);
    let d = DomainSpec::interval(1.0);
    let s = ErgodicSettings::new(GridSpec::new(2001));
    for mu in [-1.0, 0.5, 1.0] {
        let sol = solve_ergodic(&m, &d, &DriverSpec::zero(), mu, &s).unwrap();
        assert!(sol.lambda.abs() < 1e-10);
        for (i, x) in sol.v.grid.points().iter().enumerate() {
            let exact = -mu / 3.0 * x[0].abs().powi(3);
            assert!((sol.v.values[i] - exact).abs() < 5e-3);
        }
    }
}

#[test]
fn degenerate_example_fails_negative_lphi() {
    let m: SdeModel<f64> = SdeModel::degenerate_diagonal(1);
    let d = DomainSpec::interval(1.0);
    let r = check_all(&m, &DriverSpec::zero(), &d, &CheckSettings::default()).unwrap();
    assert!(!r.flags.f2_negative_lphi);
}

#[test]
fn exact_cubic_has_small_pde_residual() {
    let m: SdeModel<f64> = SdeModel::degenerate_diagonal(1);
    let d = DomainSpec::interval(1.0);
    let g: ebsde_core::Grid<f64> = ebsde_core::Grid::new(&d, GridSpec::new(401)).unwrap();
    let mut f = GridFunction::from_fn(g, |x: &[f64]| -x[0].abs().powi(3) / 3.0);
    f.gradient = f.grid.points().iter().map(|x: &Vec<f64>| vec![-x[0] * x[0].abs()]).collect();
    let r = pde_residual(&f, 0.0, 1.0, &m, &d, &DriverSpec::zero()).unwrap();
    assert!(r.interior_max < 1e-3, "{r:?}");
    assert!(r.boundary_max < 1e-3, "{r:?}");
}

// ψ ≡ κ with zero boundary data: v_α ≡ κ/α, and the ergodic pair is (κ, 0).
#[test]
fn constant_driver_closed_forms() {
    let d = DomainSpec::ball(1.0, 2);
    let m: SdeModel<f64> = SdeModel::ornstein_uhlenbeck(1.0, 0.8, 2);
    let s = SolverSettings::new(GridSpec::new(25));
    let v = solve_discounted(&m, &d, &DriverSpec::constant(0.7), 0.1, 0.0, &s).unwrap();
    assert!(v.v.active_values().all(|x| (x - 7.0).abs() < 1e-8));
    let e = solve_ergodic(&m, &d, &DriverSpec::constant(0.7), 0.0, &ErgodicSettings::new(GridSpec::new(25))).unwrap();
    assert!((e.lambda - 0.7).abs() < 1e-9);
    assert!(e.v.max_abs() < 1e-9);
}

// L = ½v'' - x v'. For v = x²/2, Lv + x² = 1/2, so λ = 1/2. On the boundary
// v'·φ' = -x² = -1, so g = μ + 1 closes the Neumann condition.
#[test]
fn ou_quadratic_driver_matches_closed_form() {
    let m: SdeModel<f64> = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
    let d = DomainSpec::interval(1.0);
    let mu = 0.25;
    let drv = DriverSpec::new("x^2", |x: &[f64], _z: &[f64]| x[0] * x[0], |_| 0.0, 2.0, 0.0, 1.0, Some(1.0))
        .with_boundary_fn(move |_| mu + 1.0);
    for scheme in [ErgodicScheme::Direct, ErgodicScheme::VanishingDiscount] {
        let s = ErgodicSettings::new(GridSpec::new(801)).with_scheme(scheme).with_tol(1e-6);
        let sol = solve_ergodic(&m, &d, &drv, mu, &s).unwrap();
        assert!((sol.lambda - 0.5).abs() < 1e-4, "{scheme:?}: {}", sol.lambda);
        for (i, x) in sol.v.grid.points().iter().enumerate() {
            assert!((sol.v.values[i] - x[0] * x[0] / 2.0).abs() < 1e-3);
        }
    }
}
