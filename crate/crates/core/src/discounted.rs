//! The discounted problem `Lv + ψ(x, ∇vᵀσ) - αv = 0`, `∇v·∇φ + g = μ` on
//! 1-d and 2-d grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::DriverSpec;
use crate::dynamics::SdeModel;
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::{Grid, GridFunction, GridSpec};
use crate::scalar::{dist, Real};
use crate::scheme::{iterate, Mode, Scheme};

pub use crate::scheme::NonlinearMethod;

fn default_max_iterations() -> usize {
    200
}

/// Grid and nonlinear-solver settings shared by the discounted and ergodic
/// solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct SolverSettings<T> {
    pub grid: GridSpec,
    #[serde(default)]
    pub method: NonlinearMethod,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Artificial viscosity `ε = factor · h`. When set, the problem is
    /// solved with `ε` and `2ε` and extrapolated linearly to `ε = 0`.
    #[serde(default)]
    pub viscosity: Option<T>,
}

impl<T: Real> SolverSettings<T> {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            method: NonlinearMethod::Newton,
            max_iterations: default_max_iterations(),
            viscosity: None,
        }
    }

    pub fn with_method(mut self, method: NonlinearMethod) -> Self {
        self.method = method;
        self
    }

    pub fn with_viscosity(mut self, factor: T) -> Self {
        self.viscosity = Some(factor);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct DiscountedSolution<T> {
    pub v: GridFunction<T>,
    pub alpha: T,
    pub mu: T,
    pub iterations: usize,
    /// Max-norm of the discrete residual at the returned iterate.
    pub residual: T,
}

/// One viscosity level.
pub(crate) fn solve_level<T: Real>(
    scheme: &Scheme<T>,
    settings: &SolverSettings<T>,
    mode: Mode<T>,
    init: Option<&[T]>,
    lambda0: T,
) -> Result<(GridFunction<T>, T, usize, T)> {
    let n = scheme.len();
    let zeros = vec![T::zero(); n];
    let v0 = init.unwrap_or(&zeros);
    let out = iterate(settings.method, scheme, mode, v0, lambda0, settings.max_iterations)?;
    let mut f = GridFunction {
        grid: scheme.grid.clone(),
        values: out.v,
        gradient: Vec::new(),
    };
    let fd = f.difference_gradient();
    f.gradient = scheme.gradient_field(&f.values, &fd);
    Ok((f, out.lambda, out.iterations, out.residual))
}

/// Viscosity levels to solve at: `[0]`, or `[ε, 2ε]`.
pub(crate) fn viscosity_levels<T: Real>(settings: &SolverSettings<T>, grid: &Grid<T>) -> Vec<T> {
    match settings.viscosity {
        None => vec![T::zero()],
        Some(c) => {
            let e = c * grid.h_min();
            vec![e, e + e]
        }
    }
}

pub(crate) fn solve_discounted_warm<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    alpha: T,
    mu: T,
    settings: &SolverSettings<T>,
    init: Option<&[T]>,
) -> Result<DiscountedSolution<T>> {
    if !(alpha > T::zero()) {
        return Err(Error::InvalidArgument(format!("discount must be positive, got {alpha}")));
    }
    let grid = Grid::new(domain, settings.grid)?;
    let mut sols = Vec::new();
    let mut iterations = 0;
    let mut residual = T::zero();
    for eps in viscosity_levels(settings, &grid) {
        let scheme = Scheme::assemble(model, domain, driver, mu, &grid, eps)?;
        let (f, _, it, res) = solve_level(&scheme, settings, Mode::Discounted(alpha), init, T::zero())?;
        iterations += it;
        residual = residual.max(res);
        sols.push(f);
    }
    let v = match sols.len() {
        1 => sols.pop().expect("one level"),
        _ => sols[0].combine(T::lit(2.0), &sols[1], -T::one()),
    };
    Ok(DiscountedSolution {
        v,
        alpha,
        mu,
        iterations,
        residual,
    })
}

/// Solves the discounted problem on the grid given by `settings`.
pub fn solve_discounted<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    alpha: T,
    mu: T,
    settings: &SolverSettings<T>,
) -> Result<DiscountedSolution<T>> {
    solve_discounted_warm(model, domain, driver, alpha, mu, settings, None)
}

/// `max |v(x) - v(x')| / |x - x'|` over node pairs. In 1-d adjacent pairs
/// suffice (chord slopes are averages of adjacent ones); in 2-d all pairs of
/// a sub-sample of at most ~2500 active nodes are scanned, plus all
/// adjacent pairs.
pub fn lipschitz_diagnostic<T: Real>(v: &GridFunction<T>) -> T {
    let g = &v.grid;
    let active: Vec<usize> = (0..g.len()).filter(|&i| g.is_active(i)).collect();
    let pts: Vec<Vec<T>> = active.iter().map(|&i| g.point(i)).collect();
    let mut best = T::zero();
    for (a, &i) in active.iter().enumerate() {
        for axis in 0..g.dim() {
            if let Some(j) = g.active_neighbour(i, axis, 1) {
                let r = dist(&pts[a], &g.point(j));
                best = best.max((v.values[i] - v.values[j]).abs() / r);
            }
        }
    }
    if g.dim() == 1 {
        return best;
    }
    let stride = (active.len() / 2500).max(1);
    let sub: Vec<usize> = (0..active.len()).step_by(stride).collect();
    let pairs = sub
        .par_iter()
        .map(|&a| {
            sub.iter()
                .filter(|&&b| b > a)
                .map(|&b| (v.values[active[a]] - v.values[active[b]]).abs() / dist(&pts[a], &pts[b]))
                .fold(T::zero(), T::max)
        })
        .reduce(T::zero, T::max);
    best.max(pairs)
}

/// Lipschitz bound `K_{ψ,x} / (-η - K_{ψ,z}K_σ)`, or `None` when the
/// denominator is not positive.
pub fn lipschitz_bound<T: Real>(k_psi_x: T, k_psi_z: T, k_sigma: T, eta: T) -> Option<T> {
    let den = -eta - k_psi_z * k_sigma;
    (den > T::zero()).then(|| k_psi_x / den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(n: usize) -> SolverSettings<f64> {
        SolverSettings::new(GridSpec::new(n))
    }

    #[test]
    fn zero_data_gives_zero() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        let s = solve_discounted(&m, &dom, &DriverSpec::zero(), 0.3, 0.0, &settings(21)).unwrap();
        assert!(s.v.max_abs() < 1e-14);
    }

    #[test]
    fn constant_driver_gives_kappa_over_alpha() {
        let dom = DomainSpec::ball(1.0, 2);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 2);
        let s = solve_discounted(&m, &dom, &DriverSpec::constant(2.0), 0.25, 0.0, &settings(17)).unwrap();
        for v in s.v.active_values() {
            assert!((v - 8.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn adding_a_constant_to_psi_shifts_by_kappa_over_alpha() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::kolmogorov(crate::dynamics::Potential::quadratic(1.0), 1);
        let d = DriverSpec::composite(0.0, 1.0, 0.3);
        let a = solve_discounted(&m, &dom, &d, 0.5, 0.2, &settings(101)).unwrap();
        let b = solve_discounted(&m, &dom, &d.plus_constant(0.7), 0.5, 0.2, &settings(101)).unwrap();
        for (x, y) in a.v.values.iter().zip(&b.v.values) {
            assert!((y - x - 1.4).abs() < 1e-9);
        }
    }

    #[test]
    fn negative_alpha_rejected() {
        let dom = DomainSpec::interval(1.0);
        let m = SdeModel::ornstein_uhlenbeck(1.0, 1.0, 1);
        assert!(matches!(
            solve_discounted(&m, &dom, &DriverSpec::zero(), 0.0, 0.0, &settings(5)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn lipschitz_of_linear_function() {
        let g = Grid::new(&DomainSpec::ball(1.0f64, 2), GridSpec::new(33)).unwrap();
        let f = GridFunction::from_fn(g, |x| 3.0 * x[0] + 4.0 * x[1]);
        assert!((lipschitz_diagnostic(&f) - 5.0).abs() < 1e-9);
        assert_eq!(lipschitz_bound(1.0, 0.0, 0.0, -2.0), Some(0.5));
        assert_eq!(lipschitz_bound(1.0, 1.0, 2.0, -1.0), None);
    }
}
