//! Finite-difference discretization of `Lv + ψ(x, ∇vᵀσ) - αv - λ = 0` with
//! the Neumann condition `∇v·∇φ + g = μ`, and the nonlinear iterations that
//! solve it.
//!
//! Discrete residual, row `i`:
//! `F_i = Σ_j A_ij v_j + s_i + w_i (ψ(x_i, z_i(v)) - α v_i - λ)`.
//! `A` holds diffusion and drift, `s` the boundary data. In 1-d every row is
//! a PDE row (`w = 1`) and the Neumann data enters through a ghost node. In
//! 2-d, nodes next to the boundary carry a first-order Neumann row (`w = 0`).

use serde::{Deserialize, Serialize};

use crate::driver::{DriverSpec, PsiFn};
use crate::dynamics::SdeModel;
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::{Grid, NodeKind};
use crate::linalg::BandMatrix;
use crate::scalar::{gram, norm, Real};

/// Nonlinear iteration used by the grid solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonlinearMethod {
    /// Newton with backtracking; the Jacobian of ψ in z is taken by central
    /// differences.
    #[default]
    Newton,
    /// Frozen-gradient fixed point on one factorization, damped when the
    /// update grows.
    Picard,
}

/// Linear form `Σ c_j v_j + constant` giving one gradient component.
#[derive(Debug, Clone, Copy)]
struct GradForm<T> {
    terms: [(usize, T); 2],
    len: usize,
    constant: T,
}

impl<T: Real> GradForm<T> {
    fn central(m: usize, p: usize, h: T) -> Self {
        let c = T::one() / (h + h);
        Self {
            terms: [(p, c), (m, -c)],
            len: 2,
            constant: T::zero(),
        }
    }

    fn fixed(value: T) -> Self {
        Self {
            terms: [(0, T::zero()); 2],
            len: 0,
            constant: value,
        }
    }

    fn eval(&self, v: &[T]) -> T {
        self.terms[..self.len]
            .iter()
            .fold(self.constant, |acc, &(j, c)| acc + c * v[j])
    }
}

/// Assembled discretization for fixed `(model, domain, driver, μ, ε)`.
pub(crate) struct Scheme<T> {
    pub grid: Grid<T>,
    pub points: Vec<Vec<T>>,
    a: BandMatrix<T>,
    source: Vec<T>,
    pub weight: Vec<T>,
    grad: Vec<Option<Vec<GradForm<T>>>>,
    sigma: Vec<Vec<T>>,
    psi: PsiFn<T>,
}

/// Off-diagonal weights `(minus, plus)` for `D v'' + b v'`: centred when
/// that keeps them non-negative, upwind otherwise.
fn hybrid<T: Real>(diff: T, b: T, h: T) -> (T, T) {
    let d = diff / (h * h);
    if d >= b.abs() / (h + h) {
        let c = b / (h + h);
        (d - c, d + c)
    } else {
        (d + (-b).max(T::zero()) / h, d + b.max(T::zero()) / h)
    }
}

impl<T: Real> Scheme<T> {
    pub fn assemble(
        model: &SdeModel<T>,
        domain: &DomainSpec<T>,
        driver: &DriverSpec<T>,
        mu: T,
        grid: &Grid<T>,
        viscosity: T,
    ) -> Result<Self> {
        let d = grid.dim();
        if model.dim() != d {
            return Err(Error::InvalidArgument(format!(
                "model dimension {} does not match domain dimension {d}",
                model.dim()
            )));
        }
        let n = grid.len();
        let bw = grid.bandwidth();
        let mut a = BandMatrix::zeros(n, bw, bw);
        let mut source = vec![T::zero(); n];
        let mut weight = vec![T::zero(); n];
        let mut grad = vec![None; n];
        let points = grid.points();
        let sigma: Vec<Vec<T>> = points.iter().map(|p| model.sigma(p)).collect();
        let half = T::lit(0.5);
        let two = T::lit(2.0);

        for i in 0..n {
            let x = &points[i];
            let kind = grid.kind(i);
            if kind == NodeKind::Outside {
                a.set(i, i, T::one());
                continue;
            }
            let cov = gram(&sigma[i], d);
            let b = model.drift(x);
            if d == 1 {
                let h = grid.spacing()[0];
                let diff = half * cov[0] + viscosity;
                weight[i] = T::one();
                match kind {
                    NodeKind::Interior => {
                        let (cm, cp) = hybrid(diff, b[0], h);
                        a.add(i, i - 1, cm);
                        a.add(i, i + 1, cp);
                        a.add(i, i, -(cm + cp));
                        grad[i] = Some(vec![GradForm::central(i - 1, i + 1, h)]);
                    }
                    _ => {
                        let nphi = domain.grad_phi(x)[0];
                        if nphi.abs() < T::lit(1e-6) {
                            return Err(Error::InvalidArgument("normal vanishes at a boundary node".into()));
                        }
                        let gb = (mu - driver.g(x)) / nphi;
                        let right = i + 1 == n;
                        let inner = if right { i - 1 } else { i + 1 };
                        let dh2 = diff / (h * h);
                        a.add(i, inner, two * dh2);
                        a.add(i, i, -two * dh2);
                        let ghost = two * diff * gb / h;
                        source[i] = if right { ghost } else { -ghost } + b[0] * gb;
                        grad[i] = Some(vec![GradForm::fixed(gb)]);
                    }
                }
                continue;
            }
            match kind {
                NodeKind::Interior => {
                    weight[i] = T::one();
                    let mut forms = Vec::with_capacity(2);
                    let mut diag = T::zero();
                    for k in 0..2 {
                        let h = grid.spacing()[k];
                        let (cm, cp) = hybrid(half * cov[k * 2 + k] + viscosity, b[k], h);
                        let m = grid.neighbour(i, k, -1).expect("interior node");
                        let p = grid.neighbour(i, k, 1).expect("interior node");
                        a.add(i, m, cm);
                        a.add(i, p, cp);
                        diag = diag - cm - cp;
                        forms.push(GradForm::central(m, p, h));
                    }
                    a.add(i, i, diag);
                    let cross = cov[1];
                    if cross != T::zero() {
                        let c = cross / (T::lit(4.0) * grid.spacing()[0] * grid.spacing()[1]);
                        for (s0, s1, sign) in [(1, 1, 1), (-1, -1, 1), (1, -1, -1), (-1, 1, -1)] {
                            let j = grid.diagonal(i, s0, s1).expect("interior node");
                            a.add(i, j, if sign > 0 { c } else { -c });
                        }
                    }
                    grad[i] = Some(forms);
                }
                _ => {
                    let p = domain.nearest_boundary_point(x)?;
                    let gp = domain.grad_phi(&p);
                    let nn = norm(&gp);
                    let normal: Vec<T> = gp.iter().map(|&v| v / nn).collect();
                    let mut diag = T::zero();
                    let mut used = false;
                    for k in 0..2 {
                        if normal[k].abs() <= T::lit(1e-12) {
                            continue;
                        }
                        let step = if normal[k] > T::zero() { 1 } else { -1 };
                        if let Some(j) = grid.active_neighbour(i, k, step) {
                            let c = normal[k].abs() / grid.spacing()[k];
                            a.add(i, j, c);
                            diag = diag - c;
                            used = true;
                        }
                    }
                    if used {
                        source[i] = driver.g(&p) - mu;
                    } else {
                        // no neighbour in the normal cone: tie to any active neighbour
                        let j = (0..2)
                            .flat_map(|k| [(k, 1isize), (k, -1)])
                            .find_map(|(k, s)| grid.active_neighbour(i, k, s))
                            .ok_or(Error::SingularMatrix)?;
                        let c = T::one() / grid.h_min();
                        a.add(i, j, c);
                        diag = diag - c;
                    }
                    a.add(i, i, diag);
                }
            }
        }
        Ok(Self {
            grid: grid.clone(),
            points,
            a,
            source,
            weight,
            grad,
            sigma,
            psi: driver.psi_fn(),
        })
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    /// `z_i = ∇v(x_i)ᵀσ(x_i)` from the scheme's gradient forms.
    fn z_at(&self, i: usize, v: &[T]) -> Option<Vec<T>> {
        let forms = self.grad[i].as_ref()?;
        let d = forms.len();
        let g: Vec<T> = forms.iter().map(|f| f.eval(v)).collect();
        let s = &self.sigma[i];
        Some((0..d).map(|m| (0..d).map(|k| g[k] * s[k * d + m]).sum()).collect())
    }

    pub fn residual(&self, v: &[T], alpha: T, lambda: T) -> Vec<T> {
        let mut f = self.a.mul_vec(v);
        for i in 0..self.len() {
            f[i] = f[i] + self.source[i];
            let w = self.weight[i];
            if w != T::zero() {
                let z = self.z_at(i, v).expect("PDE rows carry gradient forms");
                f[i] = f[i] + w * ((self.psi)(&self.points[i], &z) - alpha * v[i] - lambda);
            }
        }
        f
    }

    /// Jacobian of [`Self::residual`] in `v`.
    pub fn jacobian(&self, v: &[T], alpha: T) -> BandMatrix<T> {
        let mut j = self.a.clone();
        let eps_base = T::epsilon().cbrt();
        for i in 0..self.len() {
            let w = self.weight[i];
            if w == T::zero() {
                continue;
            }
            j.add(i, i, -alpha * w);
            let forms = self.grad[i].as_ref().expect("PDE rows carry gradient forms");
            let d = forms.len();
            let mut z = self.z_at(i, v).expect("PDE rows carry gradient forms");
            let x = &self.points[i];
            let s = &self.sigma[i];
            for m in 0..d {
                let zm = z[m];
                let e = eps_base * (T::one() + zm.abs());
                z[m] = zm + e;
                let up = (self.psi)(x, &z);
                z[m] = zm - e;
                let dn = (self.psi)(x, &z);
                z[m] = zm;
                let dpsi = (up - dn) / (e + e);
                if dpsi == T::zero() {
                    continue;
                }
                for (k, form) in forms.iter().enumerate() {
                    let c = w * dpsi * s[k * d + m];
                    for &(col, coef) in &form.terms[..form.len] {
                        j.add(i, col, c * coef);
                    }
                }
            }
        }
        j
    }

    /// Gradient field: the scheme's own forms on PDE rows, finite
    /// differences elsewhere.
    pub fn gradient_field(&self, v: &[T], fallback: &[Vec<T>]) -> Vec<Vec<T>> {
        (0..self.len())
            .map(|i| match &self.grad[i] {
                Some(forms) => forms.iter().map(|f| f.eval(v)).collect(),
                None => fallback[i].clone(),
            })
            .collect()
    }

    /// Row-sum norm of the linear part; sets the round-off floor.
    fn a_norm(&self) -> T {
        (0..self.len())
            .map(|i| self.a.row(i).map(|(_, v)| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }
}

/// What the nonlinear iteration solves for.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Mode<T> {
    /// Unknown `v`, fixed `α > 0`.
    Discounted(T),
    /// Unknowns `v` (with `v_ref = 0`) and `λ`.
    Ergodic,
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome<T> {
    pub v: Vec<T>,
    pub lambda: T,
    pub iterations: usize,
    pub residual: T,
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| x.abs()).fold(T::zero(), T::max)
}

fn step_tol<T: Real>() -> T {
    (T::epsilon() * T::lit(100.0)).max(T::lit(1e-12))
}

/// Solves the linear system of one Newton/Picard step for the given mode.
fn linear_solve<T: Real>(scheme: &Scheme<T>, mut m: BandMatrix<T>, mode: Mode<T>, rhs: &[T]) -> Result<Vec<T>> {
    match mode {
        Mode::Discounted(_) => Ok(m.factor()?.solve(rhs)),
        Mode::Ergodic => {
            let r = scheme.grid.reference();
            m.replace_column_with_neg_unit(r);
            let mut u: Vec<T> = scheme.weight.iter().map(|&w| -w).collect();
            u[r] = u[r] + T::one();
            m.factor()?.solve_rank_one(&u, r, rhs)
        }
    }
}

pub(crate) fn newton<T: Real>(
    scheme: &Scheme<T>,
    mode: Mode<T>,
    v0: &[T],
    lambda0: T,
    max_iterations: usize,
) -> Result<Outcome<T>> {
    let alpha = match mode {
        Mode::Discounted(a) => a,
        Mode::Ergodic => T::zero(),
    };
    let r = scheme.grid.reference();
    let mut v = v0.to_vec();
    let mut lambda = lambda0;
    if let Mode::Ergodic = mode {
        let c = v[r];
        for (i, x) in v.iter_mut().enumerate() {
            if scheme.grid.is_active(i) {
                *x = *x - c;
            }
        }
    }
    let a_norm = scheme.a_norm();
    let mut f = scheme.residual(&v, alpha, lambda);
    let mut fnorm = inf_norm(&f);
    for it in 1..=max_iterations {
        let floor = T::lit(1e3) * T::epsilon() * a_norm * (T::one() + inf_norm(&v));
        if fnorm <= floor {
            return Ok(Outcome {
                v,
                lambda,
                iterations: it - 1,
                residual: fnorm,
            });
        }
        let j = scheme.jacobian(&v, alpha);
        let rhs: Vec<T> = f.iter().map(|&x| -x).collect();
        let mut delta = linear_solve(scheme, j, mode, &rhs)?;
        let mut dlambda = T::zero();
        if let Mode::Ergodic = mode {
            dlambda = delta[r];
            delta[r] = T::zero();
        }
        let dnorm = inf_norm(&delta).max(dlambda.abs());
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let trial: Vec<T> = v.iter().zip(&delta).map(|(&a, &b)| a + t * b).collect();
            let tl = lambda + t * dlambda;
            let ft = scheme.residual(&trial, alpha, tl);
            let tn = inf_norm(&ft);
            if tn <= (T::one() - T::lit(1e-4) * t) * fnorm || tn <= floor {
                v = trial;
                lambda = tl;
                f = ft;
                fnorm = tn;
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        let converged = dnorm <= step_tol::<T>() * (T::one() + inf_norm(&v) + lambda.abs());
        if converged {
            return Ok(Outcome {
                v,
                lambda,
                iterations: it,
                residual: fnorm,
            });
        }
        if !accepted {
            return Err(Error::NewtonDiverged {
                iterations: it,
                residual: fnorm.to_f64_lossy(),
            });
        }
    }
    Err(Error::NewtonDiverged {
        iterations: max_iterations,
        residual: fnorm.to_f64_lossy(),
    })
}

pub(crate) fn picard<T: Real>(
    scheme: &Scheme<T>,
    mode: Mode<T>,
    v0: &[T],
    lambda0: T,
    max_sweeps: usize,
) -> Result<Outcome<T>> {
    let alpha = match mode {
        Mode::Discounted(a) => a,
        Mode::Ergodic => T::zero(),
    };
    let n = scheme.len();
    let r = scheme.grid.reference();
    // frozen-gradient matrix A - α diag(w), bordered in the ergodic case
    let mut m = scheme.a.clone();
    for i in 0..n {
        if scheme.weight[i] != T::zero() {
            m.add(i, i, -alpha * scheme.weight[i]);
        }
    }
    let lu = match mode {
        Mode::Discounted(_) => m.factor()?,
        Mode::Ergodic => {
            m.replace_column_with_neg_unit(r);
            m.factor()?
        }
    };
    let mut u: Vec<T> = scheme.weight.iter().map(|&w| -w).collect();
    u[r] = u[r] + T::one();
    let mut v = v0.to_vec();
    let mut lambda = lambda0;
    let mut damping = T::one();
    let mut last = T::infinity();
    for sweep in 1..=max_sweeps {
        let mut rhs: Vec<T> = scheme.source.iter().map(|&s| -s).collect();
        for i in 0..n {
            let w = scheme.weight[i];
            if w != T::zero() {
                let z = scheme.z_at(i, &v).expect("PDE rows carry gradient forms");
                rhs[i] = rhs[i] - w * (scheme.psi)(&scheme.points[i], &z);
            }
        }
        let (mut next, next_lambda) = match mode {
            Mode::Discounted(_) => (lu.solve(&rhs), lambda),
            Mode::Ergodic => {
                let mut s = lu.solve_rank_one(&u, r, &rhs)?;
                let l = s[r];
                s[r] = T::zero();
                (s, l)
            }
        };
        let update = v
            .iter()
            .zip(&next)
            .map(|(&a, &b)| (a - b).abs())
            .fold((next_lambda - lambda).abs(), T::max);
        if update > last {
            damping = (damping * T::lit(0.5)).max(T::lit(1.0 / 16.0));
        }
        last = update;
        for (nx, &vx) in next.iter_mut().zip(&v) {
            *nx = vx + damping * (*nx - vx);
        }
        lambda = lambda + damping * (next_lambda - lambda);
        v = next;
        if !update.is_finite() {
            break;
        }
        if update <= step_tol::<T>() * (T::one() + inf_norm(&v) + lambda.abs()) {
            let f = scheme.residual(&v, alpha, lambda);
            return Ok(Outcome {
                v,
                lambda,
                iterations: sweep,
                residual: inf_norm(&f),
            });
        }
    }
    Err(Error::PicardDiverged {
        sweeps: max_sweeps,
        update: last.to_f64_lossy(),
    })
}

pub(crate) fn iterate<T: Real>(
    method: NonlinearMethod,
    scheme: &Scheme<T>,
    mode: Mode<T>,
    v0: &[T],
    lambda0: T,
    max_iterations: usize,
) -> Result<Outcome<T>> {
    match method {
        NonlinearMethod::Newton => newton(scheme, mode, v0, lambda0, max_iterations),
        NonlinearMethod::Picard => picard(scheme, mode, v0, lambda0, max_iterations),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn interval_scheme(driver: &DriverSpec<f64>, mu: f64, n: usize) -> Scheme<f64> {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        let g = Grid::new(&dom, GridSpec::new(n)).unwrap();
        Scheme::assemble(&m, &dom, driver, mu, &g, 0.0).unwrap()
    }

    #[test]
    fn hybrid_weights_are_non_negative() {
        for (d, b) in [(1.0f64, 0.3f64), (1e-6, 5.0), (0.0, -2.0), (0.5, -1000.0)] {
            let (cm, cp) = hybrid(d, b, 0.01);
            assert!(cm >= 0.0 && cp >= 0.0, "{d} {b}");
            // both branches are consistent with b v'
            assert!(((cp - cm) * 0.01 - b).abs() < 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constants_are_in_the_kernel() {
        let s = interval_scheme(&DriverSpec::zero(), 0.0, 11);
        let f = s.residual(&[3.0; 11], 0.0, 0.0);
        assert!(f.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let d = DriverSpec::composite(0.1, 0.5, 0.4);
        let s = interval_scheme(&d, 0.3, 9);
        let v: Vec<f64> = (0..9).map(|i| (i as f64 * 0.7).sin()).collect();
        let j = s.jacobian(&v, 0.2);
        let e = 1e-6;
        for c in 0..9 {
            let mut vp = v.clone();
            vp[c] += e;
            let mut vm = v.clone();
            vm[c] -= e;
            let fp = s.residual(&vp, 0.2, 0.0);
            let fm = s.residual(&vm, 0.2, 0.0);
            for r in 0..9 {
                let fd = (fp[r] - fm[r]) / (2.0 * e);
                assert!((fd - j.get(r, c)).abs() < 1e-4 * (1.0 + fd.abs()), "({r},{c}) {fd} {}", j.get(r, c));
            }
        }
    }

    #[test]
    fn newton_and_picard_agree() {
        let d = DriverSpec::composite(0.1, 0.5, 0.4);
        let s = interval_scheme(&d, 0.3, 41);
        let z = vec![0.0; 41];
        let a = newton(&s, Mode::Discounted(0.5), &z, 0.0, 50).unwrap();
        let b = picard(&s, Mode::Discounted(0.5), &z, 0.0, 500).unwrap();
        for (x, y) in a.v.iter().zip(&b.v) {
            assert!((x - y).abs() < 1e-8);
        }
        let e1 = newton(&s, Mode::Ergodic, &z, 0.0, 50).unwrap();
        let e2 = picard(&s, Mode::Ergodic, &z, 0.0, 500).unwrap();
        assert!((e1.lambda - e2.lambda).abs() < 1e-8);
        assert_eq!(e1.v[s.grid.reference()], 0.0);
    }
}
