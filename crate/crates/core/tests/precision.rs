//! The core is generic over the scalar; f32 runs should track f64 ones.

use ebsde_core::dynamics::expected_k_rate;
use ebsde_core::{
    solve_ergodic, Domain32, Domain64, Driver32, Driver64, ErgodicSettings, GridSpec, McSettings, Model32, Model64,
    Potential, SdeModel, StationaryStart,
};

#[test]
fn f32_ergodic_solve_tracks_f64() {
    let d32 = Domain32::interval(1.0);
    let d64 = Domain64::interval(1.0);
    let m32: Model32 = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
    let m64: Model64 = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
    let s32 = ErgodicSettings::<f32>::new(GridSpec::new(201)).with_tol(1e-3);
    let s64 = ErgodicSettings::<f64>::new(GridSpec::new(201)).with_tol(1e-3);
    let a = solve_ergodic(&m32, &d32, &Driver32::composite(0.0, 1.0, 0.2), 0.5, &s32).unwrap();
    let b = solve_ergodic(&m64, &d64, &Driver64::composite(0.0, 1.0, 0.2), 0.5, &s64).unwrap();
    // The bordered system at 201 points has condition ~4e4, so f32 roundoff
    // alone moves λ by a few 1e-3.
    assert!((a.lambda as f64 - b.lambda).abs() < 5e-3, "{} vs {}", a.lambda, b.lambda);
    for (x, y) in a.v.values.iter().zip(&b.v.values) {
        assert!((*x as f64 - y).abs() < 5e-3);
    }
}

#[test]
fn f32_simulation_runs() {
    let d = Domain32::interval(1.0);
    let m: Model32 = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
    let k = expected_k_rate(&m, &d, &McSettings::new(20.0f32, 1e-3, 16, 1), &StationaryStart::Gibbs).unwrap();
    assert!((k.mean - 0.709).abs() < 4.0 * k.std_error + 0.03, "{k:?}");
}
