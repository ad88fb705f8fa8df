//! Bounded smooth domains `G = {φ > 0}` with `|∇φ| = 1` on the boundary.
//!
//! The inward normal is `n = ∇φ` throughout the crate, so the Neumann
//! condition reads `∇v·∇φ + g = μ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dense_inverse, dense_solve, sym_eigenvalues};
use crate::scalar::{dist, dot, norm, Real};

const PROJECTION_MAX_ITER: usize = 200;

/// Domain description. Both kinds are convex; `Quadratic` is the ellipsoid
/// `xᵀAx < 1` with a defining function normalised so that `|∇φ| = 1` on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(bound = "T: Real")]
pub enum DomainSpec<T> {
    Ball {
        radius: T,
        #[serde(default = "default_dim")]
        dim: usize,
    },
    Quadratic { matrix: Vec<Vec<T>> },
}

fn default_dim() -> usize {
    1
}

/// Grid-maximized geometric suprema.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GeometricConstants<T> {
    pub diameter: T,
    /// Largest eigenvalue of `∇²φ` over the sampled points (may be negative).
    pub alpha_nonconvex: T,
    /// Points per axis actually used (`2^k + 1`).
    pub points_per_axis: usize,
}

impl<T: Real> DomainSpec<T> {
    pub fn ball(radius: T, dim: usize) -> Self {
        DomainSpec::Ball { radius, dim }
    }

    /// The interval `[-r, r]`.
    pub fn interval(r: T) -> Self {
        DomainSpec::Ball { radius: r, dim: 1 }
    }

    /// Ellipsoid `xᵀAx < 1`. `matrix` must be symmetric positive definite.
    pub fn quadratic(matrix: Vec<Vec<T>>) -> Result<Self> {
        let d = matrix.len();
        if d == 0 || matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Config("quadratic matrix must be square and non-empty".into()));
        }
        let s = DomainSpec::Quadratic { matrix };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DomainSpec::Ball { radius, dim } => {
                if !(*radius > T::zero()) || *dim == 0 {
                    return Err(Error::Config("ball needs radius > 0 and dim >= 1".into()));
                }
            }
            DomainSpec::Quadratic { matrix } => {
                let d = matrix.len();
                if d == 0 || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::Config("quadratic matrix must be square".into()));
                }
                let a = self.flat_matrix();
                for i in 0..d {
                    for j in 0..d {
                        if (a[i * d + j] - a[j * d + i]).abs() > T::lit(1e-12) * (T::one() + a[i * d + j].abs()) {
                            return Err(Error::Config("quadratic matrix must be symmetric".into()));
                        }
                    }
                }
                if sym_eigenvalues(&a, d)[0] <= T::zero() {
                    return Err(Error::Config("quadratic matrix must be positive definite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            DomainSpec::Ball { dim, .. } => *dim,
            DomainSpec::Quadratic { matrix } => matrix.len(),
        }
    }

    /// Both shipped domain kinds are convex.
    pub fn convex_flag(&self) -> bool {
        true
    }

    fn flat_matrix(&self) -> Vec<T> {
        match self {
            DomainSpec::Quadratic { matrix } => matrix.iter().flatten().copied().collect(),
            DomainSpec::Ball { .. } => Vec::new(),
        }
    }

    fn quad_parts(&self, x: &[T]) -> (Vec<T>, T, Vec<T>, T) {
        // returns (Ax, q, A²x, xᵀA²x)
        let a = self.flat_matrix();
        let d = x.len();
        let ax: Vec<T> = (0..d).map(|i| dot(&a[i * d..(i + 1) * d], x)).collect();
        let q = dot(x, &ax);
        let a2x: Vec<T> = (0..d).map(|i| dot(&a[i * d..(i + 1) * d], &ax)).collect();
        let s = dot(&ax, &ax);
        (ax, q, a2x, s)
    }

    pub fn phi(&self, x: &[T]) -> T {
        match self {
            DomainSpec::Ball { radius, .. } => {
                let r = *radius;
                (r * r - dot(x, x)) / (T::lit(2.0) * r)
            }
            DomainSpec::Quadratic { .. } => {
                let (_, q, _, s) = self.quad_parts(x);
                let one_q = T::one() - q;
                let w = T::lit(2.0) * (s + one_q * one_q).sqrt();
                one_q / w
            }
        }
    }

    pub fn grad_phi(&self, x: &[T]) -> Vec<T> {
        match self {
            DomainSpec::Ball { radius, .. } => x.iter().map(|&v| -v / *radius).collect(),
            DomainSpec::Quadratic { .. } => {
                let (ax, q, a2x, s) = self.quad_parts(x);
                let one_q = T::one() - q;
                let two = T::lit(2.0);
                let ss = s + one_q * one_q;
                let rs = ss.sqrt();
                let w = two * rs;
                // ∇ss = 2A²x - 4(1-q)Ax ; ∇w = ∇ss / √ss
                (0..x.len())
                    .map(|i| {
                        let dq = two * ax[i];
                        let dss = two * a2x[i] - T::lit(4.0) * one_q * ax[i];
                        let dw = dss / rs;
                        -dq / w - one_q * dw / (w * w)
                    })
                    .collect()
            }
        }
    }

    /// Row-major `d x d` Hessian of φ.
    pub fn hess_phi(&self, x: &[T]) -> Vec<T> {
        let d = self.dim();
        match self {
            DomainSpec::Ball { radius, .. } => {
                let mut h = vec![T::zero(); d * d];
                for i in 0..d {
                    h[i * d + i] = -T::one() / *radius;
                }
                h
            }
            DomainSpec::Quadratic { .. } => {
                let step = T::epsilon().cbrt() * T::lit(4.0);
                let mut h = vec![T::zero(); d * d];
                let mut xp = x.to_vec();
                for j in 0..d {
                    xp[j] = x[j] + step;
                    let gp = self.grad_phi(&xp);
                    xp[j] = x[j] - step;
                    let gm = self.grad_phi(&xp);
                    xp[j] = x[j];
                    for i in 0..d {
                        h[i * d + j] = (gp[i] - gm[i]) / (T::lit(2.0) * step);
                    }
                }
                for i in 0..d {
                    for j in i + 1..d {
                        let m = (h[i * d + j] + h[j * d + i]) / T::lit(2.0);
                        h[i * d + j] = m;
                        h[j * d + i] = m;
                    }
                }
                h
            }
        }
    }

    /// Exact diameter of Ḡ for the shipped kinds.
    pub fn diameter(&self) -> T {
        match self {
            DomainSpec::Ball { radius, .. } => T::lit(2.0) * *radius,
            DomainSpec::Quadratic { .. } => {
                let lam = sym_eigenvalues(&self.flat_matrix(), self.dim());
                T::lit(2.0) / lam[0].sqrt()
            }
        }
    }

    pub fn centroid(&self) -> Vec<T> {
        vec![T::zero(); self.dim()]
    }

    /// Axis-aligned box `(lo, hi)` containing Ḡ.
    pub fn bounding_box(&self) -> (Vec<T>, Vec<T>) {
        let d = self.dim();
        match self {
            DomainSpec::Ball { radius, .. } => (vec![-*radius; d], vec![*radius; d]),
            DomainSpec::Quadratic { .. } => {
                let inv = dense_inverse(&self.flat_matrix(), d).expect("positive definite");
                let half: Vec<T> = (0..d).map(|i| inv[i * d + i].sqrt()).collect();
                (half.iter().map(|&h| -h).collect(), half)
            }
        }
    }

    /// Boundary tolerance: `1e-9 · diameter` in f64, scaled up for f32.
    pub fn boundary_tol(&self) -> T {
        let (lo, hi) = self.bounding_box();
        let diam = dist(&lo, &hi);
        let eps = (T::epsilon() * T::lit(1e4)).max(T::lit(1e-9));
        eps * diam
    }

    pub fn contains(&self, x: &[T]) -> bool {
        self.phi(x) >= T::zero()
    }

    /// Closest point of Ḡ; identity inside.
    pub fn project(&self, x: &[T]) -> Result<Vec<T>> {
        if self.phi(x) >= T::zero() {
            return Ok(x.to_vec());
        }
        self.nearest_boundary_point(x)
    }

    /// Closest point of ∂G (for any `x`, inside or outside).
    pub fn nearest_boundary_point(&self, x: &[T]) -> Result<Vec<T>> {
        match self {
            DomainSpec::Ball { radius, .. } => {
                let n = norm(x);
                if n == T::zero() {
                    let mut p = vec![T::zero(); x.len()];
                    p[0] = *radius;
                    return Ok(p);
                }
                Ok(x.iter().map(|&v| v * *radius / n).collect())
            }
            DomainSpec::Quadratic { .. } => self.project_quadratic(x),
        }
    }

    /// Newton on the reduced KKT system of `min |x-p|²` s.t. `pᵀAp = 1`:
    /// `p(ν) = (I + 2νA)⁻¹x`, solve `q(p(ν)) = 1` for the multiplier ν.
    /// Seeded from the radial projection through the centroid, safeguarded
    /// by bisection.
    fn project_quadratic(&self, x: &[T]) -> Result<Vec<T>> {
        let d = x.len();
        let a = self.flat_matrix();
        let two = T::lit(2.0);
        let p_of = |nu: T| -> Result<Vec<T>> {
            let mut m = a.iter().map(|&v| two * nu * v).collect::<Vec<_>>();
            for i in 0..d {
                m[i * d + i] = m[i * d + i] + T::one();
            }
            dense_solve(&m, x)
        };
        let q_of = |p: &[T]| -> T {
            (0..d).map(|i| p[i] * dot(&a[i * d..(i + 1) * d], p)).sum()
        };
        let qx = q_of(x);
        if qx == T::zero() {
            // centre: any principal axis of largest extent; fall back to radial on e_0
            let mut p = vec![T::zero(); d];
            p[0] = T::one() / a[0].sqrt();
            return Ok(p);
        }
        // multiplier range: inside points have ν < 0, outside ν > 0
        let lam = sym_eigenvalues(&a, d);
        let lam_min = lam[0];
        let lam_max = lam[d - 1];
        let (mut lo, mut hi) = if qx > T::one() {
            (T::zero(), (qx.sqrt() - T::one()) / (two * lam_min) + T::one())
        } else {
            // q(p(ν)) increases to ∞ as ν ↓ -1/(2λmax)
            (-T::one() / (two * lam_max) * (T::one() - T::lit(1e-12)), T::zero())
        };
        // seed from radial projection
        let radial: Vec<T> = x.iter().map(|&v| v / qx.sqrt()).collect();
        let ap: Vec<T> = (0..d).map(|i| dot(&a[i * d..(i + 1) * d], &radial)).collect();
        let denom = two * dot(&ap, &ap);
        let diff: Vec<T> = x.iter().zip(&radial).map(|(&xi, &pi)| xi - pi).collect();
        let mut nu = dot(&diff, &ap) / denom;
        if !(nu > lo && nu < hi) {
            nu = (lo + hi) / two;
        }
        let tol = T::epsilon() * T::lit(64.0);
        let mut resid = T::infinity();
        for _ in 0..PROJECTION_MAX_ITER {
            let p = p_of(nu)?;
            let f = q_of(&p) - T::one();
            resid = f.abs();
            if resid <= tol {
                return Ok(p);
            }
            if f > T::zero() {
                lo = nu;
            } else {
                hi = nu;
            }
            // dq/dν = 2 pᵀA p',  p' = -(I+2νA)⁻¹ 2Ap
            let ap: Vec<T> = (0..d).map(|i| dot(&a[i * d..(i + 1) * d], &p)).collect();
            let mut m = a.iter().map(|&v| two * nu * v).collect::<Vec<_>>();
            for i in 0..d {
                m[i * d + i] = m[i * d + i] + T::one();
            }
            let rhs: Vec<T> = ap.iter().map(|&v| -two * v).collect();
            let dp = dense_solve(&m, &rhs)?;
            let df = two * dot(&ap, &dp);
            let mut next = if df != T::zero() { nu - f / df } else { (lo + hi) / two };
            if !(next > lo && next < hi) {
                next = (lo + hi) / two;
            }
            if (next - nu).abs() <= T::epsilon() * (T::one() + nu.abs()) {
                let p = p_of(next)?;
                let f2 = (q_of(&p) - T::one()).abs();
                if f2 <= T::lit(1e3) * tol {
                    return Ok(p);
                }
            }
            nu = next;
        }
        Err(Error::NonConvergence {
            iterations: PROJECTION_MAX_ITER,
            residual: resid.to_f64_lossy(),
        })
    }

    /// Unit inward normal `∇φ/|∇φ|` at a boundary point.
    pub fn inward_normal(&self, x: &[T]) -> Result<Vec<T>> {
        let phi = self.phi(x);
        let tol = self.boundary_tol();
        if phi.abs() > tol {
            return Err(Error::NotOnBoundary {
                phi: phi.abs().to_f64_lossy(),
                tol: tol.to_f64_lossy(),
            });
        }
        let g = self.grad_phi(x);
        let n = norm(&g);
        Ok(g.iter().map(|&v| v / n).collect())
    }

    /// Distance to Ḡ (zero inside).
    pub fn distance(&self, x: &[T]) -> Result<T> {
        Ok(dist(x, &self.project(x)?))
    }

    /// Tensor grid over the bounding box with exactly `n` points per axis.
    pub fn box_points(&self, n: usize) -> Vec<Vec<T>> {
        let (lo, hi) = self.bounding_box();
        tensor_grid(&lo, &hi, n)
    }

    /// Grid-maximized diameter and Hessian eigenvalue. The density is rounded
    /// up to `2^k + 1` so that refined grids contain the coarse ones.
    pub fn geometric_constants(&self, sample_density: usize) -> GeometricConstants<T> {
        let n = nested_points(sample_density);
        let d = self.dim();
        let pts = self.box_points(n);
        let inside: Vec<bool> = pts.iter().map(|p| self.contains(p)).collect();
        let mut alpha = T::neg_infinity();
        for (p, &ins) in pts.iter().zip(&inside) {
            if ins {
                let h = self.hess_phi(p);
                let ev = sym_eigenvalues(&h, d);
                alpha = alpha.max(ev[d - 1]);
            }
        }
        let hull: Vec<&Vec<T>> = pts
            .iter()
            .enumerate()
            .filter(|&(i, _)| inside[i] && on_layer(i, n, d, &inside))
            .map(|(_, p)| p)
            .collect();
        let mut diameter = T::zero();
        for i in 0..hull.len() {
            for j in i + 1..hull.len() {
                diameter = diameter.max(dist(hull[i], hull[j]));
            }
        }
        GeometricConstants {
            diameter,
            alpha_nonconvex: alpha,
            points_per_axis: n,
        }
    }

    /// Points of Ḡ on the nested tensor grid.
    pub fn sample_inside(&self, sample_density: usize) -> Vec<Vec<T>> {
        let n = nested_points(sample_density);
        self.box_points(n).into_iter().filter(|p| self.contains(p)).collect()
    }

    /// Boundary sample obtained by projecting grid points of the box surface.
    pub fn sample_boundary(&self, sample_density: usize) -> Result<Vec<Vec<T>>> {
        let n = nested_points(sample_density);
        let d = self.dim();
        let mut out = Vec::new();
        for (i, p) in self.box_points(n).into_iter().enumerate() {
            let on_face = (0..d).any(|k| {
                let ik = (i / n.pow(k as u32)) % n;
                ik == 0 || ik == n - 1
            });
            if on_face {
                out.push(self.nearest_boundary_point(&p)?);
            }
        }
        Ok(out)
    }
}

/// Smallest `2^k + 1 >= max(density, 2)`.
pub fn nested_points(density: usize) -> usize {
    let mut n = 2usize;
    while n + 1 < density.max(2) {
        n *= 2;
    }
    n + 1
}

/// Row-major tensor grid (axis 0 fastest).
pub fn tensor_grid<T: Real>(lo: &[T], hi: &[T], n: usize) -> Vec<Vec<T>> {
    let d = lo.len();
    let total = n.pow(d as u32);
    let step: Vec<T> = (0..d)
        .map(|k| (hi[k] - lo[k]) / T::from_usize_lossy(n - 1))
        .collect();
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|k| {
                    let ik = idx % n;
                    idx /= n;
                    if ik == n - 1 {
                        hi[k]
                    } else {
                        lo[k] + step[k] * T::from_usize_lossy(ik)
                    }
                })
                .collect()
        })
        .collect()
}

fn on_layer(i: usize, n: usize, d: usize, inside: &[bool]) -> bool {
    for k in 0..d {
        let stride = n.pow(k as u32);
        let ik = (i / stride) % n;
        if ik == 0 || ik == n - 1 {
            return true;
        }
        if !inside[i - stride] || !inside[i + stride] {
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_projection_examples() {
        let b = DomainSpec::ball(1.0f64, 2);
        assert_eq!(b.project(&[0.5, 0.0]).unwrap(), vec![0.5, 0.0]);
        assert_eq!(b.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn inward_normals() {
        let b = DomainSpec::ball(1.0f64, 2);
        assert_eq!(b.inward_normal(&[1.0, 0.0]).unwrap(), vec![-1.0, 0.0]);
        assert_eq!(b.inward_normal(&[0.0, -1.0]).unwrap(), vec![0.0, 1.0]);
        let i = DomainSpec::interval(1.0f64);
        assert_eq!(i.inward_normal(&[1.0]).unwrap(), vec![-1.0]);
        assert!(matches!(
            b.inward_normal(&[0.5, 0.0]),
            Err(Error::NotOnBoundary { .. })
        ));
    }

    #[test]
    fn ball_constants() {
        let b = DomainSpec::ball(1.0f64, 2);
        let c = b.geometric_constants(9);
        assert!((c.diameter - 2.0).abs() < 1e-12);
        assert!((c.alpha_nonconvex + 1.0).abs() < 1e-12);
        let i = DomainSpec::interval(1.0f64);
        assert!((i.geometric_constants(2).diameter - 2.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_gradient_unit_on_boundary() {
        let q = DomainSpec::quadratic(vec![vec![1.0f64, 0.3], vec![0.3, 4.0]]).unwrap();
        for p in q.sample_boundary(9).unwrap() {
            assert!(q.phi(&p).abs() < 1e-10);
            assert!((norm(&q.grad_phi(&p)) - 1.0).abs() < 1e-10);
        }
        // gradient against finite differences
        let x = [0.2, -0.1];
        let g = q.grad_phi(&x);
        for k in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += 1e-6;
            xm[k] -= 1e-6;
            let fd = (q.phi(&xp) - q.phi(&xm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7);
        }
    }

    #[test]
    fn nested_density() {
        assert_eq!(nested_points(2), 3);
        assert_eq!(nested_points(3), 3);
        assert_eq!(nested_points(8), 9);
        assert_eq!(nested_points(9), 9);
        assert_eq!(nested_points(10), 17);
    }

    #[test]
    fn json_forms() {
        let b: DomainSpec<f64> = serde_json::from_str(r#"{"kind":"ball","radius":1.0}"#).unwrap();
        assert_eq!(b.dim(), 1);
        let q: DomainSpec<f64> =
            serde_json::from_str(r#"{"kind":"quadratic","matrix":[[1.0,0.0],[0.0,2.0]]}"#).unwrap();
        assert_eq!(q.dim(), 2);
    }
}
