//! Grid and Monte Carlo estimates of the structural constants, and the
//! resulting assumption flags.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{sup_sigma_inv_x, DriverSpec};
use crate::dynamics::{gibbs_expectation, time_averages, McSettings, SdeModel, StationaryStart};
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::linalg::{frobenius, sym_eigenvalues};
use crate::scalar::{dist, dot, gram, norm, Real};
use crate::stats::Estimate;

/// Supremum of `f(i, j)` over ordered pairs `i != j`.
fn pairs_sup<T: Real>(n: usize, f: impl Fn(usize, usize) -> T + Sync) -> T {
    (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| f(i, j))
                .fold(T::neg_infinity(), T::max)
        })
        .reduce(T::neg_infinity, T::max)
}

/// `η = sup [(x-y)ᵀ(b(x)-b(y)) + ½‖σ(x)-σ(y)‖²_F] / |x-y|²` over grid pairs.
pub fn estimate_eta<T: Real>(model: &SdeModel<T>, domain: &DomainSpec<T>, density: usize) -> T {
    let pts = domain.sample_inside(density.max(8));
    let bs: Vec<Vec<T>> = pts.iter().map(|p| model.drift(p)).collect();
    let ss: Vec<Vec<T>> = pts.iter().map(|p| model.sigma(p)).collect();
    pairs_sup(pts.len(), |i, j| {
        let dx: Vec<T> = pts[i].iter().zip(&pts[j]).map(|(&u, &v)| u - v).collect();
        let r2 = dot(&dx, &dx);
        let db: Vec<T> = bs[i].iter().zip(&bs[j]).map(|(&u, &v)| u - v).collect();
        let ds: T = ss[i].iter().zip(&ss[j]).map(|(&u, &v)| (u - v) * (u - v)).sum();
        (dot(&dx, &db) + ds / T::lit(2.0)) / r2
    })
}

/// Lipschitz constants `(K_b, K_σ)` over grid pairs (Frobenius norm for σ).
pub fn estimate_model_lipschitz<T: Real>(model: &SdeModel<T>, domain: &DomainSpec<T>, density: usize) -> (T, T) {
    let pts = domain.sample_inside(density.max(8));
    let bs: Vec<Vec<T>> = pts.iter().map(|p| model.drift(p)).collect();
    let ss: Vec<Vec<T>> = pts.iter().map(|p| model.sigma(p)).collect();
    let mut kb = T::zero();
    let mut ks = T::zero();
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let r = dist(&pts[i], &pts[j]);
            kb = kb.max(dist(&bs[i], &bs[j]) / r);
            let diff: Vec<T> = ss[i].iter().zip(&ss[j]).map(|(&u, &v)| u - v).collect();
            ks = ks.max(frobenius(&diff) / r);
        }
    }
    (kb, ks)
}

/// Sampled Lipschitz constants of ψ and `sup|ψ(·,0)|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DriverEstimates<T> {
    pub k_psi_x: T,
    pub k_psi_z: T,
    pub m_psi: T,
}

pub fn estimate_driver_constants<T: Real>(driver: &DriverSpec<T>, domain: &DomainSpec<T>, density: usize) -> DriverEstimates<T> {
    let pts = domain.sample_inside(density.max(8));
    let d = domain.dim();
    let zs: Vec<Vec<T>> = {
        let lo = vec![T::lit(-3.0); d];
        let hi = vec![T::lit(3.0); d];
        crate::geometry::tensor_grid(&lo, &hi, if d == 1 { 25 } else { 7 })
    };
    let mut kx = T::zero();
    let mut kz = T::zero();
    let mut m = T::zero();
    let zero = vec![T::zero(); d];
    for (i, x) in pts.iter().enumerate() {
        m = m.max(driver.psi(x, &zero).abs());
        for z in &zs {
            let px = driver.psi(x, z);
            for y in pts.iter().skip(i + 1) {
                kx = kx.max((px - driver.psi(y, z)).abs() / dist(x, y));
            }
        }
        for (a, za) in zs.iter().enumerate() {
            let pa = driver.psi(x, za);
            for zb in zs.iter().skip(a + 1) {
                kz = kz.max((pa - driver.psi(x, zb)).abs() / dist(za, zb));
            }
        }
    }
    DriverEstimates {
        k_psi_x: kx,
        k_psi_z: kz,
        m_psi: m,
    }
}

fn theta_alpha_kz_terms<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    sigma: &[T],
    kz: T,
    alpha: T,
    x: &[T],
    y: &[T],
) -> T {
    let d = x.len();
    let two = T::lit(2.0);
    let dx: Vec<T> = x.iter().zip(y).map(|(&u, &v)| u - v).collect();
    let bx = model.drift(x);
    let by = model.drift(y);
    let db: Vec<T> = bx.iter().zip(&by).map(|(&u, &v)| u - v).collect();
    let mut val = two * dot(&dx, &db) / dot(&dx, &dx);
    if alpha == T::zero() {
        return val;
    }
    let gx = domain.grad_phi(x);
    let gy = domain.grad_phi(y);
    let gs: Vec<T> = gx.iter().zip(&gy).map(|(&u, &v)| u + v).collect();
    // sᵀ = (∇φ(x)+∇φ(y))ᵀσ
    let st: Vec<T> = (0..d).map(|j| (0..d).map(|i| gs[i] * sigma[i * d + j]).sum()).collect();
    let a = gram(sigma, d);
    let hx = domain.hess_phi(x);
    let hy = domain.hess_phi(y);
    let tr: T = (0..d * d).map(|k| (hx[k] + hy[k]) * a[k]).sum();
    val = val + alpha * kz * norm(&st) // worst case of -α sᵀβ with |β| ≤ K_z
        - alpha / two * tr
        - alpha * dot(&gx, &bx)
        - alpha * dot(&gy, &by)
        + alpha * alpha * dot(&st, &st);
    val
}

fn require_constant_sigma<T: Real>(model: &SdeModel<T>) -> Result<Vec<T>> {
    model.constant_sigma().map(<[T]>::to_vec).ok_or(Error::SigmaNotConstant)
}

/// θ with an explicit convexity constant (clamped at 0).
pub fn estimate_theta_with_alpha<T: Real>(
    model: &SdeModel<T>,
    driver: &DriverSpec<T>,
    domain: &DomainSpec<T>,
    density: usize,
    alpha: T,
) -> Result<T> {
    let sigma = require_constant_sigma(model)?;
    let alpha = alpha.max(T::zero());
    let pts = domain.sample_inside(density.max(8));
    Ok(pairs_sup(pts.len(), |i, j| {
        theta_alpha_kz_terms(model, domain, &sigma, driver.k_psi_z, alpha, &pts[i], &pts[j])
    }))
}

/// Upper estimate of θ; the β term is bounded by its worst case.
pub fn estimate_theta<T: Real>(model: &SdeModel<T>, driver: &DriverSpec<T>, domain: &DomainSpec<T>, density: usize) -> Result<T> {
    let alpha = domain.geometric_constants(density).alpha_nonconvex;
    estimate_theta_with_alpha(model, driver, domain, density, alpha)
}

/// θ̃(ξ) for `b̃ = b - ξx`, `ψ̃ = ψ + ξzσ⁻¹x`. The shift part of β̃ is kept
/// exact, `ξσ⁻¹(x+y)/2`, so the per-pair increment is
/// `ξ[-2 + (α/2)(∇φ(x)-∇φ(y))ᵀ(x-y)]`.
pub fn estimate_theta_shifted<T: Real>(
    model: &SdeModel<T>,
    driver: &DriverSpec<T>,
    domain: &DomainSpec<T>,
    density: usize,
    alpha: T,
    xi: T,
) -> Result<T> {
    let sigma = require_constant_sigma(model)?;
    let alpha = alpha.max(T::zero());
    let pts = domain.sample_inside(density.max(8));
    let two = T::lit(2.0);
    Ok(pairs_sup(pts.len(), |i, j| {
        let (x, y) = (&pts[i][..], &pts[j][..]);
        let base = theta_alpha_kz_terms(model, domain, &sigma, driver.k_psi_z, alpha, x, y);
        let gx = domain.grad_phi(x);
        let gy = domain.grad_phi(y);
        let dg: Vec<T> = gx.iter().zip(&gy).map(|(&u, &v)| u - v).collect();
        let dx: Vec<T> = x.iter().zip(y).map(|(&u, &v)| u - v).collect();
        base + xi * (-two + alpha / two * dot(&dg, &dx))
    }))
}

/// Kolmogorov constants δ and c.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct KolmogorovConstants<T> {
    pub delta: T,
    pub c: T,
}

pub fn estimate_kolmogorov_constants<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    density: usize,
) -> Result<KolmogorovConstants<T>> {
    let pot = model.require_potential()?;
    let d = domain.dim();
    let pts = domain.sample_inside(density.max(8));
    let mut lo = T::infinity();
    let mut hi = T::neg_infinity();
    let mut c = T::infinity();
    for p in &pts {
        let v = dot(&pot.gradient(p), p);
        lo = lo.min(v);
        hi = hi.max(v);
        c = c.min(sym_eigenvalues(&pot.hessian(p), d)[0]);
    }
    if c <= T::zero() {
        return Err(Error::NonConvexPotential { c: c.to_f64_lossy() });
    }
    Ok(KolmogorovConstants { delta: hi - lo, c })
}

/// `E^ν[Lφ]`: quadrature for Kolmogorov models, otherwise a long-run time
/// average from a burn-in start.
pub fn expected_lphi<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    mc: &McSettings<T>,
    quadrature_resolution: usize,
) -> Result<Estimate<T>> {
    if model.potential().is_some() {
        let v = gibbs_expectation(model, domain, &|x: &[T]| model.l_phi(domain, x), quadrature_resolution)?;
        return Ok(Estimate {
            mean: v,
            std_error: T::zero(),
            samples: 0,
        });
    }
    let per = time_averages(model, domain, &|x: &[T]| model.l_phi(domain, x), mc, &StationaryStart::Auto)?;
    let v: Vec<T> = per.iter().map(|p| p.0).collect();
    Ok(Estimate::from_samples(&v))
}

/// Assumption flags; `None` when the assumption does not apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisFlags {
    pub g1: bool,
    pub g2: bool,
    pub g2_prime: bool,
    pub g3: bool,
    pub g4: bool,
    pub h1: bool,
    pub h2: bool,
    pub h3: bool,
    pub h3_prime: Option<bool>,
    pub h4: Option<bool>,
    pub f1: bool,
    pub f2_bounded: bool,
    pub f2_negative_lphi: bool,
    pub f2: bool,
    pub f2_prime: bool,
    pub f2_double_prime: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct HypothesisReport<T> {
    pub eta: T,
    pub k_b: T,
    pub k_sigma: T,
    pub k_psi_x: T,
    pub k_psi_z: T,
    pub m_psi: T,
    pub sampled_driver: DriverEstimates<T>,
    pub theta: Option<T>,
    pub delta: Option<T>,
    pub c_convexity: Option<T>,
    pub e_nu_lphi: Estimate<T>,
    pub min_minus_lphi: T,
    pub sup_grad_phi_sigma: T,
    pub sup_grad_phi: T,
    pub diameter: T,
    pub alpha_nonconvex: T,
    /// Drift shift ξ making `η̃ + K_{ψ̃,z}K_σ < 0` when (H3) fails.
    pub suggested_xi: Option<T>,
    pub flags: HypothesisFlags,
    pub notes: Vec<String>,
}

/// Settings for [`check_all`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct CheckSettings<T> {
    pub density: usize,
    pub quadrature_resolution: usize,
    pub mc: McSettings<T>,
}

impl<T: Real> Default for CheckSettings<T> {
    fn default() -> Self {
        Self {
            density: 33,
            quadrature_resolution: 4097,
            mc: McSettings::new(T::lit(50.0), T::lit(1e-3), 32, 7),
        }
    }
}

pub fn check_all<T: Real>(
    model: &SdeModel<T>,
    driver: &DriverSpec<T>,
    domain: &DomainSpec<T>,
    settings: &CheckSettings<T>,
) -> Result<HypothesisReport<T>> {
    let density = settings.density;
    let mut notes = Vec::new();
    let three = T::lit(3.0);
    let tol = T::lit(1e-6);

    let boundary = domain.sample_boundary(density)?;
    let g1 = boundary
        .iter()
        .all(|p| domain.phi(p).abs() <= tol && (norm(&domain.grad_phi(p)) - T::one()).abs() <= tol);
    let geo = domain.geometric_constants(density);
    let g2 = domain.convex_flag() && geo.alpha_nonconvex <= tol;

    let eta = estimate_eta(model, domain, density);
    let (k_b, k_sigma) = estimate_model_lipschitz(model, domain, density);
    let sampled = estimate_driver_constants(driver, domain, density.min(33));
    let slack = T::one() + T::lit(1e-9);
    let h2 = sampled.k_psi_x <= driver.k_psi_x * slack + tol
        && sampled.k_psi_z <= driver.k_psi_z * slack + tol
        && sampled.m_psi <= driver.m_psi * slack + tol;
    if !h2 {
        notes.push("declared driver constants are smaller than sampled ones".into());
    }
    let h3 = eta + driver.k_psi_z * k_sigma < T::zero();

    let theta = match estimate_theta(model, driver, domain, density) {
        Ok(t) => Some(t),
        Err(Error::SigmaNotConstant) => None,
        Err(e) => return Err(e),
    };

    let kol = if model.potential().is_some() {
        match estimate_kolmogorov_constants(model, domain, density) {
            Ok(k) => Some(k),
            Err(Error::NonConvexPotential { c }) => {
                notes.push(format!("potential not uniformly convex on the grid (c = {c:e})"));
                None
            }
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let e_lphi = expected_lphi(model, domain, &settings.mc, settings.quadrature_resolution)?;
    let inside = domain.sample_inside(density);
    let d = domain.dim();
    let mut min_minus_lphi = T::infinity();
    let mut sup_gs = T::zero();
    let mut sup_g = T::zero();
    for p in &inside {
        min_minus_lphi = min_minus_lphi.min(-model.l_phi(domain, p));
        let g = domain.grad_phi(p);
        let s = model.sigma(p);
        let gs: Vec<T> = (0..d).map(|j| (0..d).map(|i| g[i] * s[i * d + j]).sum()).collect();
        sup_gs = sup_gs.max(norm(&gs));
        sup_g = sup_g.max(norm(&g));
    }
    let f2_bounded = driver.psi_bound.is_some();
    let f2_negative_lphi = e_lphi.mean + three * e_lphi.std_error < T::zero();
    let f2_prime = min_minus_lphi > sup_gs * driver.k_psi_z;
    let f2_double_prime = kol.map(|k| {
        let lhs = (k.delta / (T::lit(2.0) * k.c).sqrt() + T::lit(2.0).sqrt() * sup_g) * driver.k_psi_z;
        lhs < -(e_lphi.mean + three * e_lphi.std_error)
    });

    let suggested_xi = if h3 {
        None
    } else {
        match sup_sigma_inv_x(model, &inside) {
            Ok(s) if k_sigma * s < T::one() => {
                let need = (eta + driver.k_psi_z * k_sigma) / (T::one() - k_sigma * s);
                Some(need * T::lit(1.5) + T::lit(0.1))
            }
            Ok(_) => {
                notes.push("K_sigma sup|sigma^-1 x| >= 1: no drift shift available".into());
                None
            }
            Err(_) => {
                notes.push("sigma singular on the domain: no drift shift available".into());
                None
            }
        }
    };

    let flags = HypothesisFlags {
        g1,
        g2,
        g2_prime: true,
        g3: true,
        g4: true,
        h1: k_b.is_finite() && k_sigma.is_finite(),
        h2,
        h3,
        h3_prime: theta.map(|t| t < T::zero()),
        h4: model.potential().map(|_| kol.is_some()),
        f1: true,
        f2_bounded,
        f2_negative_lphi,
        f2: f2_bounded && f2_negative_lphi,
        f2_prime,
        f2_double_prime,
    };
    Ok(HypothesisReport {
        eta,
        k_b,
        k_sigma,
        k_psi_x: driver.k_psi_x,
        k_psi_z: driver.k_psi_z,
        m_psi: driver.m_psi,
        sampled_driver: sampled,
        theta,
        delta: kol.map(|k| k.delta),
        c_convexity: kol.map(|k| k.c),
        e_nu_lphi: e_lphi,
        min_minus_lphi,
        sup_grad_phi_sigma: sup_gs,
        sup_grad_phi: sup_g,
        diameter: geo.diameter,
        alpha_nonconvex: geo.alpha_nonconvex,
        suggested_xi,
        flags,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Potential;

    #[test]
    fn eta_examples() {
        let ball = DomainSpec::ball(1.0f64, 2);
        let ou = SdeModel::ornstein_uhlenbeck(1.0, 0.7, 2);
        assert!((estimate_eta(&ou, &ball, 9) + 1.0).abs() < 1e-12);
        let bm = SdeModel::ornstein_uhlenbeck(0.0, 1.0, 2);
        assert!(estimate_eta(&bm, &ball, 9).abs() < 1e-12);
        let deg = SdeModel::<f64>::degenerate_diagonal(1);
        let i = DomainSpec::interval(1.0);
        assert!((estimate_eta(&deg, &i, 17) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn kolmogorov_constants() {
        let ball = DomainSpec::ball(1.0f64, 2);
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 2);
        let k = estimate_kolmogorov_constants(&m, &ball, 17).unwrap();
        assert!((k.delta - 1.0).abs() < 1e-12);
        assert!((k.c - 1.0).abs() < 1e-12);
        let q = SdeModel::kolmogorov(Potential::quartic(), 1);
        let e = estimate_kolmogorov_constants(&q, &DomainSpec::interval(1.0), 17).unwrap_err();
        assert_eq!(e, Error::NonConvexPotential { c: 0.0 });
        let ou = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        assert_eq!(
            estimate_kolmogorov_constants(&ou, &DomainSpec::interval(1.0), 9).unwrap_err(),
            Error::NotKolmogorov
        );
    }

    #[test]
    fn theta_reduces_to_two_eta_on_convex_domains() {
        let ball = DomainSpec::ball(1.0f64, 2);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 2);
        let d = DriverSpec::composite(0.0, 1.0, 0.3);
        let th = estimate_theta(&m, &d, &ball, 9).unwrap();
        assert!((th + 2.0).abs() < 1e-12);
        let deg = SdeModel::<f64>::degenerate_diagonal(1);
        assert_eq!(
            estimate_theta(&deg, &d, &DomainSpec::interval(1.0), 9).unwrap_err(),
            Error::SigmaNotConstant
        );
    }

    #[test]
    fn theta_shift_bound() {
        let ball = DomainSpec::ball(1.0f64, 2);
        let m = SdeModel::ornstein_uhlenbeck(0.2, 1.0, 2);
        let d = DriverSpec::composite(0.0, 1.0, 0.3);
        let alpha = 0.4;
        let diam = 2.0;
        let th = estimate_theta_with_alpha(&m, &d, &ball, 9, alpha).unwrap();
        for &xi in &[0.0, 0.5, 1.0, 3.0] {
            let tt = estimate_theta_shifted(&m, &d, &ball, 9, alpha, xi).unwrap();
            assert!(tt <= th - (2.0 - 0.5 * diam * diam * alpha * alpha) * xi + 1e-12);
        }
    }
}
