//! Checks that do not reuse the solver's own stencils: a wide-stencil PDE
//! residual, the pathwise BSDE residual along simulated paths, the
//! drift-shift cross-solve and a Monte Carlo estimate of λ.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{sup_sigma_inv_x, DriverSpec};
use crate::dynamics::{simulate_streaming, step_count, McSettings, SdeModel, StartRule, StationaryStart};
use crate::ergodic::{solve_ergodic, ErgodicSettings, ErgodicSolution};
use crate::error::Result;
use crate::geometry::DomainSpec;
use crate::grid::{GridFunction, NodeKind, ValueGradient};
use crate::hypotheses::estimate_eta;
use crate::linalg::sym_eigenvalues;
use crate::scalar::{dot, gram, row_mat, Real};
use crate::stats::{path_rng, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PdeResidual<T> {
    /// `max |Lv + ψ(x, ∇vᵀσ) - λ|` over checked interior nodes.
    pub interior_max: T,
    /// `max |∇v·∇φ + g - μ|` over checked boundary nodes.
    pub boundary_max: T,
    pub interior_nodes: usize,
    pub boundary_nodes: usize,
    /// Interior nodes skipped because `λ_min(σσᵀ) ≤ h`.
    pub degenerate_nodes: usize,
}

/// One-sided second-order derivative along `axis` at node `i`, using
/// offsets `s, 2s` (`s = ±step`). `None` if the nodes are not active.
fn one_sided<T: Real>(v: &GridFunction<T>, i: usize, axis: usize, step: isize) -> Option<T> {
    let g = &v.grid;
    let h = g.spacing()[axis] * T::from_isize(step.abs()).expect("small int");
    for s in [step, -step] {
        let a = g.active_neighbour(i, axis, s);
        let b = g.active_neighbour(i, axis, 2 * s);
        if let (Some(a), Some(b)) = (a, b) {
            let d = (T::lit(-3.0) * v.values[i] + T::lit(4.0) * v.values[a] - v.values[b]) / (h + h);
            return Some(if s > 0 { d } else { -d });
        }
    }
    None
}

/// Residuals of `Lv + ψ(x, ∇vᵀσ) = λ` and `∇v·∇φ + g = μ` for grid
/// values `v`. Derivatives use offsets of two cells (centred in the
/// interior, one-sided at the boundary), so they differ from the solver's.
pub fn pde_residual<T: Real>(
    v: &GridFunction<T>,
    lambda: T,
    mu: T,
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
) -> Result<PdeResidual<T>> {
    let g = &v.grid;
    let d = g.dim();
    let hs = g.spacing().to_vec();
    let two = T::lit(2.0);
    let mut out = PdeResidual {
        interior_max: T::zero(),
        boundary_max: T::zero(),
        interior_nodes: 0,
        boundary_nodes: 0,
        degenerate_nodes: 0,
    };
    for i in 0..g.len() {
        let x = g.point(i);
        let is_edge = match d {
            1 => i == 0 || i + 1 == g.len(),
            _ => g.kind(i) == NodeKind::Boundary,
        };
        if !g.is_active(i) {
            continue;
        }
        if is_edge {
            let p = domain.nearest_boundary_point(&x)?;
            let n = domain.grad_phi(&p);
            let mut grad = vec![T::zero(); d];
            let mut ok = true;
            for k in 0..d {
                // step towards the interior along the normal component
                let dir = if n[k] >= T::zero() { 2 } else { -2 };
                match one_sided(v, i, k, dir).or_else(|| one_sided(v, i, k, dir / 2)) {
                    Some(dk) => grad[k] = dk,
                    None => ok = false,
                }
            }
            if ok {
                let r = (dot(&grad, &n) + driver.g(&p) - mu).abs();
                out.boundary_max = out.boundary_max.max(r);
                out.boundary_nodes += 1;
            }
            continue;
        }
        let s = model.sigma(&x);
        let a = gram(&s, d);
        if sym_eigenvalues(&a, d)[0] <= g.h_min() {
            out.degenerate_nodes += 1;
            continue;
        }
        let mut grad = vec![T::zero(); d];
        let mut second = vec![T::zero(); d * d];
        let mut ok = true;
        for k in 0..d {
            match (g.active_neighbour(i, k, 2), g.active_neighbour(i, k, -2)) {
                (Some(p), Some(m)) => {
                    let w = hs[k] * two;
                    grad[k] = (v.values[p] - v.values[m]) / (w + w);
                    second[k * d + k] = (v.values[p] - two * v.values[i] + v.values[m]) / (w * w);
                }
                _ => ok = false,
            }
        }
        if ok && d == 2 {
            let c = [(2, 2), (2, -2), (-2, 2), (-2, -2)].map(|(a, b)| g.diagonal(i, a, b).filter(|&j| g.is_active(j)));
            if let [Some(pp), Some(pm), Some(mp), Some(mm)] = c {
                let den = T::lit(16.0) * hs[0] * hs[1];
                let xy = (v.values[pp] - v.values[pm] - v.values[mp] + v.values[mm]) / den;
                second[1] = xy;
                second[2] = xy;
            } else {
                ok = false;
            }
        }
        if !ok {
            continue;
        }
        let b = model.drift(&x);
        let tr: T = (0..d * d).map(|k| a[k] * second[k]).sum();
        let lv = tr / two + dot(&b, &grad);
        let z = row_mat(&grad, &s);
        let r = (lv + driver.psi(&x, &z) - lambda).abs();
        out.interior_max = out.interior_max.max(r);
        out.interior_nodes += 1;
    }
    Ok(out)
}

/// [`pde_residual`] on a solver output.
pub fn solution_residual<T: Real>(
    sol: &ErgodicSolution<T>,
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
) -> Result<PdeResidual<T>> {
    pde_residual(&sol.v, sol.lambda, sol.mu, model, domain, driver)
}

/// Pathwise residual statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BsdeResidual<T> {
    pub h: T,
    pub horizon: T,
    /// Signed residual `R`.
    pub mean: Estimate<T>,
    /// `|R|`.
    pub mean_abs: Estimate<T>,
    /// Residual accumulated over `[0, T/2]` only.
    pub half_horizon: Estimate<T>,
    pub per_path: Vec<T>,
}

impl<T: Real> BsdeResidual<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["path", "residual"])?;
        for (i, r) in self.per_path.iter().enumerate() {
            wr.write_record([i.to_string(), r.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

struct PathSums<T> {
    residual: T,
    half: T,
    psi: T,
    flux: T,
}

#[allow(clippy::too_many_arguments)]
fn path_sums<T: Real>(
    field: &dyn ValueGradient<T>,
    lambda: T,
    mu: T,
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Vec<PathSums<T>>> {
    let n = step_count(mc.horizon, mc.h)?;
    let half = n / 2;
    let rule = StartRule::resolve(start, model, domain, mc.h)?;
    let d = model.dim();
    let h = mc.h;
    let sh = h.sqrt();
    (0..mc.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let x0 = rule.draw(model, domain, h, mc.scheme, &mut rng)?;
            let v0 = field.value(&x0);
            let mut s = vec![T::zero(); d * d];
            let mut z = vec![T::zero(); d];
            // running Σ[(ψ-λ)h + (g-μ)ΔK - ζ√h ξ]
            let mut acc = T::zero();
            let mut at_half = T::zero();
            let mut psi = T::zero();
            let mut flux = T::zero();
            let (xt, _) = simulate_streaming(model, domain, &x0, n, h, mc.scheme, &mut rng, |st| {
                let gr = field.gradient(st.x);
                model.sigma_into(st.x, &mut s);
                for m in 0..d {
                    z[m] = (0..d).map(|k| gr[k] * s[k * d + m]).sum();
                }
                let ps = driver.psi(st.x, &z) * h;
                let fl = if st.dk > T::zero() {
                    let b = domain.nearest_boundary_point(st.next).unwrap_or_else(|_| st.next.to_vec());
                    (driver.g(&b) - mu) * st.dk
                } else {
                    T::zero()
                };
                psi = psi + ps;
                flux = flux + fl;
                acc = acc + ps - lambda * h + fl - dot(&z, st.noise) * sh;
                if st.index + 1 == half {
                    at_half = v0 - field.value(st.next) - acc;
                }
            })?;
            let residual = v0 - field.value(&xt) - acc;
            if half == 0 {
                at_half = T::zero();
            }
            Ok(PathSums {
                residual,
                half: at_half,
                psi,
                flux,
            })
        })
        .collect()
}

/// `R = v(X_0) - v(X_T) - Σ[ψ(X_i, ζ_i) - λ]h - Σ[g(p_i) - μ]ΔK_i + Σ ζ_i √h ξ_i`
/// with `ζ = ∇vᵀσ` and `p_i` the boundary point nearest to `X_{i+1}`, per path.
#[allow(clippy::too_many_arguments)]
pub fn bsde_residual<T: Real>(
    field: &dyn ValueGradient<T>,
    lambda: T,
    mu: T,
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<BsdeResidual<T>> {
    let sums = path_sums(field, lambda, mu, model, domain, driver, mc, start)?;
    let r: Vec<T> = sums.iter().map(|s| s.residual).collect();
    let a: Vec<T> = r.iter().map(|v| v.abs()).collect();
    let hh: Vec<T> = sums.iter().map(|s| s.half).collect();
    Ok(BsdeResidual {
        h: mc.h,
        horizon: mc.horizon,
        mean: Estimate::from_samples(&r),
        mean_abs: Estimate::from_samples(&a),
        half_horizon: Estimate::from_samples(&hh),
        per_path: r,
    })
}

/// `λ ≈ (1/T) E[Σ ψ(X_i, ζ_i)h + Σ (g - μ)ΔK_i]` from a stationary start.
#[allow(clippy::too_many_arguments)]
pub fn lambda_monte_carlo<T: Real>(
    field: &dyn ValueGradient<T>,
    mu: T,
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Estimate<T>> {
    let sums = path_sums(field, T::zero(), mu, model, domain, driver, mc, start)?;
    let per: Vec<T> = sums.iter().map(|s| (s.psi + s.flux) / mc.horizon).collect();
    Ok(Estimate::from_samples(&per))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DriftShiftReport<T> {
    pub xi: T,
    pub lambda: T,
    pub lambda_shifted: T,
    pub lambda_gap: T,
    /// Max-norm distance of the two normalized value functions.
    pub v_gap: T,
    pub eta: T,
    pub eta_shifted: T,
    /// `|η̃ - (η - ξ)|`.
    pub eta_gap: T,
}

/// Solves with `(b, ψ)` and with `(b - ξx, ψ + ξ zσ⁻¹x)` and compares.
pub fn drift_shift_equivalence<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mu: T,
    xi: T,
    settings: &ErgodicSettings<T>,
) -> Result<DriftShiftReport<T>> {
    let sup = sup_sigma_inv_x(model, &domain.sample_inside(33))?;
    let shifted_model = model.shifted(xi);
    let shifted_driver = driver.shifted(model, xi, sup);
    let (a, b) = rayon::join(
        || solve_ergodic(model, domain, driver, mu, settings),
        || solve_ergodic(&shifted_model, domain, &shifted_driver, mu, settings),
    );
    let (a, b) = (a?, b?);
    let eta = estimate_eta(model, domain, 17);
    let eta_shifted = estimate_eta(&shifted_model, domain, 17);
    Ok(DriftShiftReport {
        xi,
        lambda: a.lambda,
        lambda_shifted: b.lambda,
        lambda_gap: (a.lambda - b.lambda).abs(),
        v_gap: a.v.max_distance(&b.v),
        eta,
        eta_shifted,
        eta_gap: (eta_shifted - (eta - xi)).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Potential;
    use crate::error::Error;
    use crate::grid::{ExactField, Grid, GridSpec};

    #[test]
    fn constants_have_zero_residual() {
        let dom = DomainSpec::ball(1.0, 2);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 2);
        let g = Grid::new(&dom, GridSpec::new(21)).unwrap();
        let v = GridFunction::from_fn(g, |_| 3.0);
        let r = pde_residual(&v, 0.0, 0.0, &m, &dom, &DriverSpec::zero()).unwrap();
        assert_eq!(r.interior_max, 0.0);
        assert!(r.boundary_max < 1e-12);
        assert!(r.interior_nodes > 100 && r.boundary_nodes > 10);
    }

    #[test]
    fn cubic_residual_shrinks_with_h() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::degenerate_diagonal(1);
        let mu = 1.0;
        let res = |n| {
            let g = Grid::new(&dom, GridSpec::new(n)).unwrap();
            let v = GridFunction::from_fn(g, |x: &[f64]| -(mu / 3.0) * x[0].abs().powi(3));
            pde_residual(&v, 0.0, mu, &m, &dom, &DriverSpec::zero()).unwrap()
        };
        let (a, b) = (res(201), res(401));
        assert!(a.degenerate_nodes > 0);
        assert!(b.interior_max < a.interior_max / 3.0, "{a:?} {b:?}");
        assert!(b.boundary_max < a.boundary_max / 3.0);
    }

    #[test]
    fn frozen_dynamics_give_zero_residual() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::with_constant_sigma("still", 1, |_, o: &mut [f64]| o[0] = 0.0, vec![0.0]);
        let f = ExactField {
            value: |x: &[f64]| x[0] * x[0],
            gradient: |x: &[f64]| vec![2.0 * x[0]],
        };
        let mc = McSettings::new(1.0, 0.01, 8, 3);
        let r = bsde_residual(&f, 0.0, 0.0, &m, &dom, &DriverSpec::zero(), &mc, &StationaryStart::Fixed(vec![0.4])).unwrap();
        assert!(r.per_path.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn drift_shift_needs_invertible_sigma() {
        let dom = DomainSpec::interval(1.0);
        let st = ErgodicSettings::new(GridSpec::new(21));
        let e = drift_shift_equivalence(&SdeModel::degenerate_diagonal(1), &dom, &DriverSpec::zero(), 0.0, 0.5, &st);
        assert!(matches!(e, Err(Error::SingularSigma { .. })));
    }

    #[test]
    fn zero_shift_is_identity() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        let st = ErgodicSettings::new(GridSpec::new(101));
        let r = drift_shift_equivalence(&m, &dom, &DriverSpec::composite(0.0, 1.0, 0.2), 0.3, 0.0, &st).unwrap();
        assert!(r.lambda_gap < 1e-12 && r.v_gap < 1e-10 && r.eta_gap < 1e-12);
    }
}
