use ebsde_core::control::{AffineCost, Control, ControlProblem};
use ebsde_core::dynamics::step_reflected;
use ebsde_core::grid::ValueGradient;
use ebsde_core::{
    solve_discounted, solve_ergodic, BoundaryCost, DomainSpec, DriverSpec, ErgodicSettings, Grid, GridFunction,
    GridSpec, Potential, ReflectionScheme, SdeModel, SolverSettings,
};
use proptest::prelude::*;

fn domains() -> impl Strategy<Value = DomainSpec<f64>> {
    prop_oneof![
        (0.5f64..2.0).prop_map(DomainSpec::interval),
        (0.5f64..2.0).prop_map(|r| DomainSpec::ball(r, 2)),
        (0.3f64..3.0, 0.3f64..3.0, -0.2f64..0.2)
            .prop_map(|(a, b, c)| DomainSpec::quadratic(vec![vec![a, c], vec![c, b]]).unwrap()),
    ]
}

fn inside(d: &DomainSpec<f64>, u: &[f64]) -> Vec<f64> {
    let (lo, hi) = d.bounding_box();
    let mut x: Vec<f64> = (0..d.dim()).map(|k| lo[k] + (hi[k] - lo[k]) * u[k]).collect();
    while !d.contains(&x) {
        x.iter_mut().for_each(|v| *v *= 0.9);
    }
    x
}

fn kolmogorov() -> SdeModel<f64> {
    SdeModel::kolmogorov(Potential::quadratic(1.0), 1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reflected_step_stays_in_domain(
        d in domains(),
        u in prop::collection::vec(0.0f64..1.0, 2),
        z in prop::collection::vec(-4.0f64..4.0, 2),
        h in 1e-4f64..1e-2,
        mirror in any::<bool>(),
    ) {
        let x = inside(&d, &u);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, d.dim());
        let scheme = if mirror { ReflectionScheme::Mirror } else { ReflectionScheme::Projection };
        let (y, dk) = step_reflected(&m, &d, &x, h, &z[..d.dim()], scheme).unwrap();
        prop_assert!(d.phi(&y) >= -d.boundary_tol(), "phi {}", d.phi(&y));
        prop_assert!(dk >= 0.0);
    }

    #[test]
    fn nearest_boundary_point_lies_on_boundary(
        d in domains(),
        u in prop::collection::vec(-1.0f64..1.0, 2),
        scale in 0.1f64..3.0,
    ) {
        let x: Vec<f64> = u[..d.dim()].iter().map(|v| v * scale).collect();
        prop_assume!(x.iter().any(|v| v.abs() > 1e-3));
        let p = d.nearest_boundary_point(&x).unwrap();
        prop_assert!(d.phi(&p).abs() <= 10.0 * d.boundary_tol());
        let q = d.project(&x).unwrap();
        let qq = d.project(&q).unwrap();
        for (a, b) in q.iter().zip(&qq) {
            prop_assert!((a - b).abs() < 1e-9);
        }
        if d.contains(&x) {
            prop_assert_eq!(q, x);
        }
    }

    #[test]
    fn interpolation_reproduces_affine_functions(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, u in 0.0f64..1.0, w in 0.0f64..1.0) {
        let d = DomainSpec::ball(1.0, 2);
        let g = Grid::new(&d, GridSpec::new(21)).unwrap();
        let f = GridFunction::from_fn(g, |x| a + b * x[0] + c * x[1]);
        // Cells cut by the boundary interpolate from their active corners only.
        let x: Vec<f64> = inside(&d, &[u, w]).iter().map(|v| 0.8 * v).collect();
        prop_assert!((f.value(&x) - (a + b * x[0] + c * x[1])).abs() < 1e-9);
    }

    #[test]
    fn hamiltonian_is_the_pointwise_minimum(x in -1.0f64..1.0, z in -3.0f64..3.0, r in prop::collection::vec(-1.0f64..1.0, 3)) {
        let controls: Vec<Control<f64>> = r.iter().enumerate()
            .map(|(i, &ri)| Control { name: format!("u{i}"), r: vec![ri], cost: AffineCost { constant: 0.1 * i as f64, linear: vec![ri] } })
            .collect();
        let p = ControlProblem::new(controls.clone(), BoundaryCost::Zero).unwrap();
        let (h, k) = p.hamiltonian(&[x], &[z]);
        for c in &controls {
            prop_assert!(h <= c.cost.eval(&[x]) + z * c.r[0] + 1e-12);
        }
        prop_assert!((h - (controls[k].cost.eval(&[x]) + z * controls[k].r[0])).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn discounted_shift_by_constant(kappa in -2.0f64..2.0, alpha in 0.05f64..2.0, mu in -1.0f64..1.0) {
        let (m, d) = (kolmogorov(), DomainSpec::interval(1.0));
        let drv = DriverSpec::composite(0.0, 1.0, 0.3);
        let s = SolverSettings::new(GridSpec::new(61));
        let a = solve_discounted(&m, &d, &drv, alpha, mu, &s).unwrap();
        let b = solve_discounted(&m, &d, &drv.plus_constant(kappa), alpha, mu, &s).unwrap();
        for (x, y) in a.v.values.iter().zip(&b.v.values) {
            prop_assert!((y - x - kappa / alpha).abs() < 1e-8);
        }
    }

    #[test]
    fn discounted_bound(c in -1.0f64..1.0, a in -1.0f64..1.0, k in -0.5f64..0.5, alpha in 0.05f64..2.0) {
        let (m, d) = (kolmogorov(), DomainSpec::interval(1.0));
        let drv = DriverSpec::composite(c, a, k);
        let v = solve_discounted(&m, &d, &drv, alpha, 0.0, &SolverSettings::new(GridSpec::new(61))).unwrap();
        prop_assert!(alpha * v.v.max_abs() <= drv.psi_bound.unwrap() + 1e-9);
    }

    #[test]
    fn ergodic_shift_by_constant(kappa in -2.0f64..2.0, mu in -1.0f64..1.0) {
        let (m, d) = (kolmogorov(), DomainSpec::interval(1.0));
        let drv = DriverSpec::composite(0.0, 1.0, 0.3);
        let s = ErgodicSettings::new(GridSpec::new(101));
        let a = solve_ergodic(&m, &d, &drv, mu, &s).unwrap();
        let b = solve_ergodic(&m, &d, &drv.plus_constant(kappa), mu, &s).unwrap();
        prop_assert!((b.lambda - a.lambda - kappa).abs() < 1e-8);
        prop_assert!(a.v.max_distance(&b.v) < 1e-8);
    }

    #[test]
    fn lambda_is_non_increasing_in_mu(mu in -2.0f64..2.0, step in 0.01f64..1.0) {
        let (m, d) = (kolmogorov(), DomainSpec::interval(1.0));
        let drv = DriverSpec::composite(0.0, 1.0, 0.3);
        let s = ErgodicSettings::new(GridSpec::new(101));
        let lo = solve_ergodic(&m, &d, &drv, mu, &s).unwrap().lambda;
        let hi = solve_ergodic(&m, &d, &drv, mu + step, &s).unwrap().lambda;
        prop_assert!(hi <= lo + 1e-10, "{lo} -> {hi}");
    }

    #[test]
    fn normalization_holds_at_reference(mu in -1.0f64..1.0) {
        let d = DomainSpec::ball(1.0, 2);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 2);
        let sol = solve_ergodic(&m, &d, &DriverSpec::composite(0.1, 1.0, 0.2), mu, &ErgodicSettings::new(GridSpec::new(21))).unwrap();
        prop_assert!(sol.v.values[sol.v.grid.reference()].abs() < 1e-12);
    }
}
