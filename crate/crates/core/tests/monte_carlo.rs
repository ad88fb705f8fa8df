//! Grid solutions against direct simulation, and pathwise identities.

use std::sync::Arc;

use ebsde_core::control::{girsanov_weight_check, AffineCost, Control, ControlProblem, Policy};
use ebsde_core::dynamics::{coupled_distances, k_growth, local_time_identity_gap, simulate_streaming};
use ebsde_core::grid::ValueGradient;
use ebsde_core::stats::path_rng;
use ebsde_core::verification::lambda_monte_carlo;
use ebsde_core::{
    solve_discounted, solve_ergodic, BoundaryCost, DomainSpec, DriverSpec, ErgodicSettings, Estimate, GridSpec,
    McSettings, Potential, ReflectionScheme, SdeModel, SolverSettings, StationaryStart,
};

fn kolmogorov() -> SdeModel<f64> {
    SdeModel::kolmogorov(Potential::quadratic(1.0), 1)
}

fn interval() -> DomainSpec<f64> {
    DomainSpec::interval(1.0)
}

/// `E[∫ e^{-αt}(ψ(X) dt + (g - μ) dK)]` from `x0`, truncated at `horizon`.
fn discounted_mc(x0: f64, alpha: f64, mu: f64, horizon: f64, h: f64, paths: usize) -> Estimate<f64> {
    let m = kolmogorov();
    let d = interval();
    let n = (horizon / h).round() as usize;
    let vals: Vec<f64> = (0..paths)
        .map(|p| {
            let mut rng = path_rng(99, p as u64);
            let mut acc = 0.0;
            simulate_streaming(&m, &d, &[x0], n, h, ReflectionScheme::Mirror, &mut rng, |s| {
                let t = h * s.index as f64;
                acc += (-alpha * t).exp() * (s.x[0].abs().cos() * h - mu * s.dk);
            })
            .unwrap();
            acc
        })
        .collect();
    Estimate::from_samples(&vals)
}

#[test]
fn discounted_solution_matches_simulation() {
    let (alpha, mu) = (1.5, 0.4);
    let sol = solve_discounted(
        &kolmogorov(),
        &interval(),
        &DriverSpec::cosine(1.0),
        alpha,
        mu,
        &SolverSettings::new(GridSpec::new(401)),
    )
    .unwrap();
    for x0 in [-0.9, -0.4, 0.0, 0.5, 0.95] {
        let est = discounted_mc(x0, alpha, mu, 8.0, 1e-3, 300);
        let v = sol.v.value(&[x0]);
        assert!(
            (est.mean - v).abs() <= 4.0 * est.std_error + 5e-3,
            "x0 {x0}: grid {v}, simulation {} +- {}",
            est.mean,
            est.std_error
        );
    }
}

fn rms_identity_gap(scheme: ReflectionScheme, h: f64) -> f64 {
    let s: f64 = (0..6)
        .map(|seed| local_time_identity_gap(&kolmogorov(), &interval(), &[0.3], 5.0, h, seed, scheme).unwrap().powi(2))
        .sum();
    (s / 6.0).sqrt()
}

// The discrete identity gap is an O(√h) discretization error.
#[test]
fn local_time_identity_gap_vanishes_with_h() {
    for scheme in [ReflectionScheme::Mirror, ReflectionScheme::Projection] {
        let coarse = rms_identity_gap(scheme, 1e-2);
        let fine = rms_identity_gap(scheme, 1e-4);
        assert!(fine < coarse / 3.0 && fine < 0.06, "{scheme:?}: {coarse} -> {fine}");
    }
}

// With b = -x and constant σ, synchronous coupling contracts at rate e^{-t}
// on a convex domain.
#[test]
fn synchronous_coupling_contracts() {
    let m: SdeModel<f64> = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
    let dist = coupled_distances(&m, &interval(), &[-0.8], &[0.7], 3.0, 1e-3, 1, ReflectionScheme::Mirror).unwrap();
    let h = 3.0 / (dist.len() - 1).max(1) as f64;
    for (i, r) in dist.iter().enumerate() {
        let bound = 1.5 * (-(i as f64) * h).exp();
        assert!(*r <= bound + 1e-2, "step {i}: {r} > {bound}");
    }
}

#[test]
fn local_time_grows_at_most_linearly() {
    let mc = McSettings::new(20.0, 1e-3, 16, 4);
    let g = k_growth(&kolmogorov(), &interval(), &[0.0], 10, &mc).unwrap();
    assert!(g.constant < 1.0, "{}", g.constant);
    assert!(g.mean_k.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn ergodic_constant_matches_long_run_average() {
    let m = kolmogorov();
    let d = interval();
    let drv = DriverSpec::cosine(1.0).with_boundary(BoundaryCost::Linear { c: 0.1, a: vec![0.5] });
    let mu = 0.3;
    let sol = solve_ergodic(&m, &d, &drv, mu, &ErgodicSettings::new(GridSpec::new(801))).unwrap();
    let mc = McSettings::new(50.0, 1e-3, 64, 8);
    let est = lambda_monte_carlo(&sol.v, mu, &m, &d, &drv, &mc, &StationaryStart::Gibbs).unwrap();
    assert!(est.within(sol.lambda, 3.0) || (est.mean - sol.lambda).abs() < 3e-3, "{est:?} vs {}", sol.lambda);
}

#[test]
fn girsanov_reweighting_agrees_with_drift_shift() {
    let m = kolmogorov();
    let d = interval();
    let c = |r: f64, k: f64| Control {
        name: String::new(),
        r: vec![r],
        cost: AffineCost { constant: 0.2, linear: vec![k] },
    };
    let p = ControlProblem::new(vec![c(0.25, 0.3), c(-0.25, -0.3)], BoundaryCost::Zero).unwrap();
    let sol = solve_ergodic(&m, &d, &p.to_driver(&d), 0.0, &ErgodicSettings::new(GridSpec::new(401))).unwrap();
    let field: Arc<dyn ValueGradient<f64>> = Arc::new(sol.v);
    let mc = McSettings::new(4.0, 2e-3, 800, 21);
    let start = StationaryStart::BurnIn { duration: 3.0 };
    let r = girsanov_weight_check(&m, &d, &p, &Policy::constant(0), Some(field), 0.0, &mc, &start).unwrap();
    assert!(r.agree, "{r:?}");
    assert!(r.mean_weight.within(1.0, 4.0), "{:?}", r.mean_weight);
}
