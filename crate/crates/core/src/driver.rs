use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::SdeModel;
use crate::error::{Error, Result};
use crate::linalg::dense_inverse;
use crate::scalar::{dot, Real};

pub type PsiFn<T> = Arc<dyn Fn(&[T], &[T]) -> T + Send + Sync>;
pub type BoundaryFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Nonlinearity `ψ(x, z)` (`z` a row vector) and boundary cost `g(x)` with
/// their declared constants.
#[derive(Clone)]
pub struct DriverSpec<T> {
    pub label: String,
    psi: PsiFn<T>,
    g: BoundaryFn<T>,
    pub k_psi_x: T,
    pub k_psi_z: T,
    /// Bound on `|ψ(·, 0)|`.
    pub m_psi: T,
    /// Bound on `|ψ|` when ψ is bounded in `z` as well.
    pub psi_bound: Option<T>,
}

impl<T> fmt::Debug for DriverSpec<T>
where
    T: fmt::Debug,
{
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriverSpec")
            .field("label", &self.label)
            .field("k_psi_x", &self.k_psi_x)
            .field("k_psi_z", &self.k_psi_z)
            .field("m_psi", &self.m_psi)
            .field("psi_bound", &self.psi_bound)
            .finish()
    }
}

/// Boundary cost shapes available from configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCost<T> {
    #[default]
    Zero,
    Constant { value: T },
    /// `g(x) = c + aᵀx`.
    Linear { c: T, a: Vec<T> },
}

impl<T: Real> BoundaryCost<T> {
    pub fn into_fn(self) -> BoundaryFn<T> {
        match self {
            BoundaryCost::Zero => Arc::new(|_: &[T]| T::zero()),
            BoundaryCost::Constant { value } => Arc::new(move |_: &[T]| value),
            BoundaryCost::Linear { c, a } => Arc::new(move |x: &[T]| c + dot(&a, x)),
        }
    }
}

impl<T: Real> DriverSpec<T> {
    pub fn new(
        label: impl Into<String>,
        psi: impl Fn(&[T], &[T]) -> T + Send + Sync + 'static,
        g: impl Fn(&[T]) -> T + Send + Sync + 'static,
        k_psi_x: T,
        k_psi_z: T,
        m_psi: T,
        psi_bound: Option<T>,
    ) -> Self {
        Self {
            label: label.into(),
            psi: Arc::new(psi),
            g: Arc::new(g),
            k_psi_x,
            k_psi_z,
            m_psi,
            psi_bound,
        }
    }

    /// `ψ ≡ 0`, `g ≡ 0`.
    pub fn zero() -> Self {
        Self::constant(T::zero())
    }

    /// `ψ ≡ κ`, `g ≡ 0`.
    pub fn constant(kappa: T) -> Self {
        Self::new(
            format!("constant({kappa})"),
            move |_, _| kappa,
            |_| T::zero(),
            T::zero(),
            T::zero(),
            kappa.abs(),
            Some(kappa.abs()),
        )
    }

    /// `ψ(x, z) = c + a cos|x| + k sin(z₁)`, `g ≡ 0`.
    pub fn composite(c: T, a: T, k: T) -> Self {
        Self::new(
            format!("composite(c={c},a={a},k={k})"),
            move |x: &[T], z: &[T]| c + a * dot(x, x).sqrt().cos() + k * z[0].sin(),
            |_| T::zero(),
            a.abs(),
            k.abs(),
            c.abs() + a.abs(),
            Some(c.abs() + a.abs() + k.abs()),
        )
    }

    /// `ψ(x, z) = a cos|x|`.
    pub fn cosine(a: T) -> Self {
        let mut d = Self::composite(T::zero(), a, T::zero());
        d.label = format!("cosine(a={a})");
        d
    }

    pub fn with_boundary(mut self, g: BoundaryCost<T>) -> Self {
        self.label = format!("{}; g={:?}", self.label, g_label(&g));
        self.g = g.into_fn();
        self
    }

    pub fn with_boundary_fn(mut self, g: impl Fn(&[T]) -> T + Send + Sync + 'static) -> Self {
        self.g = Arc::new(g);
        self
    }

    /// Adds a constant `κ` to ψ.
    pub fn plus_constant(&self, kappa: T) -> Self {
        let psi = self.psi.clone();
        let mut d = self.clone();
        d.label = format!("{}+{kappa}", self.label);
        d.psi = Arc::new(move |x: &[T], z: &[T]| psi(x, z) + kappa);
        d.m_psi = self.m_psi + kappa.abs();
        d.psi_bound = self.psi_bound.map(|b| b + kappa.abs());
        d
    }

    #[inline]
    pub fn psi(&self, x: &[T], z: &[T]) -> T {
        (self.psi)(x, z)
    }

    #[inline]
    pub fn g(&self, x: &[T]) -> T {
        (self.g)(x)
    }

    pub fn psi_fn(&self) -> PsiFn<T> {
        self.psi.clone()
    }

    /// `ψ̃(x, z) = ψ(x, z) + ξ z σ(x)⁻¹ x`, to be paired with `b̃ = b - ξx`.
    /// `sup_inv_x` bounds `|σ⁻¹x|` on Ḡ and enters the declared `K_{ψ̃,z}`.
    pub fn shifted(&self, model: &SdeModel<T>, xi: T, sup_inv_x: T) -> Self {
        let psi = self.psi.clone();
        let m = model.clone();
        let d = model.dim();
        let mut out = self.clone();
        out.label = format!("{}-shift({xi})", self.label);
        out.psi = Arc::new(move |x: &[T], z: &[T]| {
            let s = m.sigma(x);
            let inv = dense_inverse(&s, d).unwrap_or_else(|_| vec![T::nan(); d * d]);
            let w: T = (0..d)
                .map(|i| z[i] * (0..d).map(|j| inv[i * d + j] * x[j]).sum::<T>())
                .sum();
            psi(x, z) + xi * w
        });
        out.k_psi_z = self.k_psi_z + xi * sup_inv_x;
        out.psi_bound = None;
        out
    }
}

fn g_label<T: Real>(g: &BoundaryCost<T>) -> String {
    match g {
        BoundaryCost::Zero => "0".into(),
        BoundaryCost::Constant { value } => format!("{value}"),
        BoundaryCost::Linear { c, a } => format!("{c}+{a:?}.x"),
    }
}

/// `sup |σ(x)⁻¹x|` over the given points; `SingularSigma` if σ is not
/// invertible at one of them.
pub fn sup_sigma_inv_x<T: Real>(model: &SdeModel<T>, points: &[Vec<T>]) -> Result<T> {
    let d = model.dim();
    let mut best = T::zero();
    for p in points {
        let s = model.sigma(p);
        let cond_small = crate::linalg::sym_eigenvalues(&crate::scalar::gram(&s, d), d)[0];
        if cond_small <= T::epsilon() * T::lit(1e3) {
            return Err(Error::SingularSigma {
                point: p.iter().map(|v| v.to_f64_lossy()).collect(),
            });
        }
        let inv = dense_inverse(&s, d).map_err(|_| Error::SingularSigma {
            point: p.iter().map(|v| v.to_f64_lossy()).collect(),
        })?;
        let y: Vec<T> = (0..d).map(|i| (0..d).map(|j| inv[i * d + j] * p[j]).sum()).collect();
        best = best.max(dot(&y, &y).sqrt());
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn composite_constants() {
        let d = DriverSpec::composite(0.0f64, 1.0, 0.2);
        assert_eq!(d.k_psi_z, 0.2);
        assert_eq!(d.m_psi, 1.0);
        assert!((d.psi(&[0.0], &[0.0]) - 1.0).abs() < 1e-15);
        let shifted = d.plus_constant(2.0);
        assert!((shifted.psi(&[0.3], &[0.1]) - d.psi(&[0.3], &[0.1]) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn linear_boundary_cost() {
        let d = DriverSpec::<f64>::zero().with_boundary(BoundaryCost::Linear { c: 0.1, a: vec![0.5] });
        assert!((d.g(&[1.0]) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn shifted_driver_adds_linear_term() {
        let m = SdeModel::ornstein_uhlenbeck(1.0f64, 2.0, 1);
        let d = DriverSpec::<f64>::zero();
        let s = d.shifted(&m, 0.5, 0.5);
        // ξ z σ⁻¹ x = 0.5 * 3 * 0.4 / 2
        assert!((s.psi(&[0.4], &[3.0]) - 0.3).abs() < 1e-15);
        assert_eq!(s.k_psi_z, 0.25);
    }

    #[test]
    fn singular_sigma_detected() {
        let m = SdeModel::<f64>::degenerate_diagonal(1);
        assert!(matches!(
            sup_sigma_inv_x(&m, &[vec![0.0]]),
            Err(Error::SingularSigma { .. })
        ));
    }
}
