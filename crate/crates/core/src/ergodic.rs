//! Ergodic problem `Lv + ψ(x, ∇vᵀσ) = λ`, `∇v·∇φ + g = μ`: the pair
//! `(v, λ)` at fixed μ, the curve `μ ↦ λ(μ)`, and its inverse.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discounted::{solve_discounted_warm, solve_level, viscosity_levels, SolverSettings};
use crate::driver::DriverSpec;
use crate::dynamics::SdeModel;
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::{Grid, GridFunction, GridSpec};
use crate::hypotheses::{estimate_eta, HypothesisFlags};
use crate::scalar::{row_mat, Real};
use crate::scheme::{Mode, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErgodicScheme {
    /// `α_k = α_0 2^{-k}` until `α v_α(x_ref)` settles, then one Richardson step.
    VanishingDiscount,
    /// Newton on `(v, λ)` with `v(x_ref) = 0`.
    #[default]
    Direct,
    /// Both; fails with `SchemeMismatch` if they differ by more than `5·tol`.
    CrossCheck,
}

fn default_tol<T: Real>() -> T {
    T::lit(1e-4)
}

fn default_halvings() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ErgodicSettings<T> {
    pub solver: SolverSettings<T>,
    #[serde(default)]
    pub scheme: ErgodicScheme,
    #[serde(default = "default_tol")]
    pub tol: T,
    /// First discount; defaults to `|η|/4` (0.25 when η ≥ 0).
    #[serde(default)]
    pub alpha0: Option<T>,
    #[serde(default = "default_halvings")]
    pub max_halvings: usize,
}

impl<T: Real> ErgodicSettings<T> {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            solver: SolverSettings::new(grid),
            scheme: ErgodicScheme::Direct,
            tol: default_tol(),
            alpha0: None,
            max_halvings: default_halvings(),
        }
    }

    pub fn with_scheme(mut self, scheme: ErgodicScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_tol(mut self, tol: T) -> Self {
        self.tol = tol;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ErgodicDiagnostics<T> {
    pub scheme: ErgodicScheme,
    /// Discounts visited by the vanishing-discount scheme.
    pub alphas: Vec<T>,
    /// `α_k v_{α_k}(x_ref)` along the sequence.
    pub lambda_sequence: Vec<T>,
    /// `|λ_extrapolated - λ_last|` (vanishing discount) or 0.
    pub extrapolation_error: T,
    /// Max-norm of the discrete residual.
    pub residual: T,
    pub iterations: usize,
    /// `|λ_vanishing - λ_direct|` when both schemes ran.
    pub cross_check_gap: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ErgodicSolution<T> {
    /// Normalized so that `v(x_ref) = 0`.
    pub v: GridFunction<T>,
    /// `ζ = ∇vᵀσ` per node.
    pub zeta: Vec<Vec<T>>,
    pub lambda: T,
    pub mu: T,
    pub x_ref: Vec<T>,
    pub diagnostics: ErgodicDiagnostics<T>,
}

impl<T: Real> ErgodicSolution<T> {
    fn new(v: GridFunction<T>, model: &SdeModel<T>, lambda: T, mu: T, diagnostics: ErgodicDiagnostics<T>) -> Self {
        let zeta = zeta_field(&v, model);
        let x_ref = v.grid.point(v.grid.reference());
        Self {
            v,
            zeta,
            lambda,
            mu,
            x_ref,
            diagnostics,
        }
    }

    /// Writes `(x, kind, v, ∇v, ζ)` per active node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let g = &self.v.grid;
        let d = g.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..d).map(|k| format!("x{k}")).collect();
        header.push("value".into());
        header.extend((0..d).map(|k| format!("dv{k}")));
        header.extend((0..d).map(|k| format!("zeta{k}")));
        wr.write_record(&header)?;
        for i in 0..g.len() {
            if !g.is_active(i) {
                continue;
            }
            let mut rec: Vec<String> = g.point(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.v.values[i].to_string());
            rec.extend(self.v.gradient[i].iter().map(|v| v.to_string()));
            rec.extend(self.zeta[i].iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn zeta_field<T: Real>(v: &GridFunction<T>, model: &SdeModel<T>) -> Vec<Vec<T>> {
    let g = &v.grid;
    (0..g.len())
        .map(|i| row_mat(&v.gradient[i], &model.sigma(&g.point(i))))
        .collect()
}

fn first_alpha<T: Real>(model: &SdeModel<T>, domain: &DomainSpec<T>, settings: &ErgodicSettings<T>) -> T {
    settings.alpha0.unwrap_or_else(|| {
        let eta = estimate_eta(model, domain, 17);
        if eta < T::zero() {
            eta.abs() / T::lit(4.0)
        } else {
            T::lit(0.25)
        }
    })
}

fn solve_direct<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mu: T,
    settings: &ErgodicSettings<T>,
) -> Result<ErgodicSolution<T>> {
    let grid = Grid::new(domain, settings.solver.grid)?;
    let mut levels = Vec::new();
    let mut iterations = 0;
    let mut residual = T::zero();
    for eps in viscosity_levels(&settings.solver, &grid) {
        let scheme = Scheme::assemble(model, domain, driver, mu, &grid, eps)?;
        let (f, lambda, it, res) = solve_level(&scheme, &settings.solver, Mode::Ergodic, None, T::zero())?;
        iterations += it;
        residual = residual.max(res);
        levels.push((f, lambda));
    }
    let (v, lambda) = if levels.len() == 1 {
        levels.pop().expect("one level")
    } else {
        let two = T::lit(2.0);
        (
            levels[0].0.combine(two, &levels[1].0, -T::one()),
            two * levels[0].1 - levels[1].1,
        )
    };
    Ok(ErgodicSolution::new(
        v,
        model,
        lambda,
        mu,
        ErgodicDiagnostics {
            scheme: ErgodicScheme::Direct,
            alphas: Vec::new(),
            lambda_sequence: Vec::new(),
            extrapolation_error: T::zero(),
            residual,
            iterations,
            cross_check_gap: None,
        },
    ))
}

fn solve_vanishing<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mu: T,
    settings: &ErgodicSettings<T>,
) -> Result<ErgodicSolution<T>> {
    let tol = settings.tol;
    let two = T::lit(2.0);
    let mut alpha = first_alpha(model, domain, settings);
    let mut alphas = Vec::new();
    let mut lambdas = Vec::new();
    let mut prev: Option<(T, GridFunction<T>)> = None;
    let mut init: Option<Vec<T>> = None;
    let mut iterations = 0;
    let mut residual;
    let mut change = T::infinity();
    for _ in 0..settings.max_halvings {
        let sol = solve_discounted_warm(model, domain, driver, alpha, mu, &settings.solver, init.as_deref())?;
        iterations += sol.iterations;
        residual = sol.residual;
        let r = sol.v.grid.reference();
        let lam = alpha * sol.v.values[r];
        let mut vbar = sol.v;
        let c = vbar.values[r];
        vbar.shift(-c);
        alphas.push(alpha);
        lambdas.push(lam);
        if let Some((lp, vp)) = &prev {
            let dl = (lam - *lp).abs();
            let dv = vbar.max_distance(vp);
            change = dl.max(dv);
            if dl < tol / two && dv < tol {
                let lambda = two * lam - *lp;
                let v = vbar.combine(two, vp, -T::one());
                return Ok(ErgodicSolution::new(
                    v,
                    model,
                    lambda,
                    mu,
                    ErgodicDiagnostics {
                        scheme: ErgodicScheme::VanishingDiscount,
                        alphas,
                        lambda_sequence: lambdas,
                        extrapolation_error: (lambda - lam).abs(),
                        residual,
                        iterations,
                        cross_check_gap: None,
                    },
                ));
            }
        }
        // warm start for α/2: v ≈ v̄ + λ/(α/2)
        let next_alpha = alpha / two;
        let mut guess = vbar.values.clone();
        for (i, g) in guess.iter_mut().enumerate() {
            if vbar.grid.is_active(i) {
                *g = *g + lam / next_alpha;
            }
        }
        init = Some(guess);
        prev = Some((lam, vbar));
        alpha = next_alpha;
    }
    Err(Error::NoConvergence {
        steps: settings.max_halvings,
        change: change.to_f64_lossy(),
    })
}

/// Solves for `(v, λ)` at fixed μ with the scheme chosen in `settings`.
pub fn solve_ergodic<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mu: T,
    settings: &ErgodicSettings<T>,
) -> Result<ErgodicSolution<T>> {
    match settings.scheme {
        ErgodicScheme::Direct => solve_direct(model, domain, driver, mu, settings),
        ErgodicScheme::VanishingDiscount => solve_vanishing(model, domain, driver, mu, settings),
        ErgodicScheme::CrossCheck => {
            let (vd, d) = rayon::join(
                || solve_vanishing(model, domain, driver, mu, settings),
                || solve_direct(model, domain, driver, mu, settings),
            );
            let (vd, mut d) = (vd?, d?);
            let gap = (vd.lambda - d.lambda).abs();
            if gap > T::lit(5.0) * settings.tol {
                return Err(Error::SchemeMismatch {
                    vanishing: vd.lambda.to_f64_lossy(),
                    direct: d.lambda.to_f64_lossy(),
                });
            }
            d.diagnostics.scheme = ErgodicScheme::CrossCheck;
            d.diagnostics.alphas = vd.diagnostics.alphas;
            d.diagnostics.lambda_sequence = vd.diagnostics.lambda_sequence;
            d.diagnostics.extrapolation_error = vd.diagnostics.extrapolation_error;
            d.diagnostics.cross_check_gap = Some(gap);
            Ok(d)
        }
    }
}

/// Sampled `μ ↦ λ(μ)`, sorted by μ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct LambdaCurve<T> {
    pub mu: Vec<T>,
    pub lambda: Vec<T>,
    pub tol: T,
}

impl<T: Real> LambdaCurve<T> {
    /// `λ(μ_{i+1}) ≤ λ(μ_i) + tol` for consecutive samples.
    pub fn non_increasing(&self) -> bool {
        self.lambda.windows(2).all(|w| w[1] <= w[0] + self.tol)
    }

    /// `λ(μ_{i+1}) < λ(μ_i)` for consecutive samples.
    pub fn strictly_decreasing(&self) -> bool {
        self.lambda.windows(2).all(|w| w[1] < w[0])
    }

    /// `-(λ(μ_{i+1}) - λ(μ_i)) / (μ_{i+1} - μ_i)`.
    pub fn slopes(&self) -> Vec<T> {
        self.mu
            .windows(2)
            .zip(self.lambda.windows(2))
            .map(|(m, l)| -(l[1] - l[0]) / (m[1] - m[0]))
            .collect()
    }

    /// `max |Δλ| / |Δμ|` over consecutive samples.
    pub fn continuity_modulus(&self) -> T {
        self.slopes().into_iter().map(T::abs).fold(T::zero(), T::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["mu", "lambda", "tol"])?;
        for (m, l) in self.mu.iter().zip(&self.lambda) {
            wr.write_record([m.to_string(), l.to_string(), self.tol.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// λ at each μ (solved in parallel).
pub fn lambda_of_mu<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    mus: &[T],
    settings: &ErgodicSettings<T>,
) -> Result<LambdaCurve<T>> {
    let mut mu = mus.to_vec();
    mu.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let lambda = mu
        .par_iter()
        .map(|&m| solve_ergodic(model, domain, driver, m, settings).map(|s| s.lambda))
        .collect::<Result<Vec<_>>>()?;
    Ok(LambdaCurve {
        mu,
        lambda,
        tol: settings.tol,
    })
}

/// Strength of the uniqueness statement attached to an inverted μ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniquenessClaim {
    /// The slope of λ(μ) is bounded away from zero: μ is unique.
    Unique,
    /// Existence only; other roots may exist.
    ExistenceOnly,
    /// No sufficient condition was verified.
    Unverified,
}

impl UniquenessClaim {
    pub fn from_flags(flags: Option<&HypothesisFlags>) -> Self {
        match flags {
            Some(f) if f.f2_prime || f.f2_double_prime == Some(true) => UniquenessClaim::Unique,
            Some(f) if f.f2 => UniquenessClaim::ExistenceOnly,
            _ => UniquenessClaim::Unverified,
        }
    }
}

fn default_expansions() -> usize {
    12
}

fn default_bisections() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct InversionSettings<T> {
    pub ergodic: ErgodicSettings<T>,
    /// `E^ν[Lφ]`, used to size the first bracket.
    #[serde(default)]
    pub e_nu_lphi: Option<T>,
    #[serde(default = "default_expansions")]
    pub max_expansions: usize,
    #[serde(default = "default_bisections")]
    pub max_bisections: usize,
}

impl<T: Real> InversionSettings<T> {
    pub fn new(ergodic: ErgodicSettings<T>) -> Self {
        Self {
            ergodic,
            e_nu_lphi: None,
            max_expansions: default_expansions(),
            max_bisections: default_bisections(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct BoundaryCostSolution<T> {
    pub mu: T,
    pub solution: ErgodicSolution<T>,
    pub lambda_target: T,
    /// Bracket `[lo, hi]` after each step; every entry straddles the target.
    pub bracket_history: Vec<(T, T)>,
    /// Secant slope `-(λ(hi) - λ(lo))/(hi - lo)` of the first straddling bracket.
    pub bracket_slope: T,
    pub evaluations: usize,
    pub claim: UniquenessClaim,
}

/// Finds μ with `λ(μ) = lambda_target` by bisection on an expanding bracket.
pub fn solve_boundary_cost<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    driver: &DriverSpec<T>,
    lambda_target: T,
    settings: &InversionSettings<T>,
    flags: Option<&HypothesisFlags>,
) -> Result<BoundaryCostSolution<T>> {
    let es = &settings.ergodic;
    let tol = es.tol;
    let eval = |mu: T| solve_ergodic(model, domain, driver, mu, es);
    let (s0, s1) = rayon::join(|| eval(T::zero()), || eval(T::one()));
    let (l0, l1) = (s0?.lambda, s1?.lambda);
    let mut evaluations = 2;
    let m_psi = driver.psi_bound.unwrap_or(driver.m_psi);
    let slope_hint = settings
        .e_nu_lphi
        .map(T::abs)
        .unwrap_or_else(T::zero)
        .max((l0 - l1).abs())
        .max(T::lit(1e-3));
    let two = T::lit(2.0);
    let mut b = (((lambda_target - l0).abs() + two * m_psi) / slope_hint).max(T::one());
    let mut expansions = 0;
    let (mut lo, mut hi, mut sol_lo, mut sol_hi) = loop {
        let (a, c) = rayon::join(|| eval(-b), || eval(b));
        let (a, c) = (a?, c?);
        evaluations += 2;
        if a.lambda >= lambda_target && c.lambda <= lambda_target {
            break (-b, b, a, c);
        }
        expansions += 1;
        if expansions > settings.max_expansions {
            return Err(Error::BracketFailure {
                target: lambda_target.to_f64_lossy(),
                lo: (-b).to_f64_lossy(),
                hi: b.to_f64_lossy(),
            });
        }
        b = b * two;
    };
    let bracket_slope = (sol_lo.lambda - sol_hi.lambda) / (hi - lo);
    if bracket_slope < tol {
        return Err(Error::FlatCurve {
            slope: bracket_slope.to_f64_lossy(),
        });
    }
    let mut history = vec![(lo, hi)];
    let done = |s: &ErgodicSolution<T>| (s.lambda - lambda_target).abs() <= tol / T::lit(4.0);
    if done(&sol_lo) || done(&sol_hi) {
        let best = if (sol_lo.lambda - lambda_target).abs() <= (sol_hi.lambda - lambda_target).abs() {
            sol_lo
        } else {
            sol_hi
        };
        return Ok(BoundaryCostSolution {
            mu: best.mu,
            solution: best,
            lambda_target,
            bracket_history: history,
            bracket_slope,
            evaluations,
            claim: UniquenessClaim::from_flags(flags),
        });
    }
    for _ in 0..settings.max_bisections {
        let mid = (lo + hi) / two;
        let s = eval(mid)?;
        evaluations += 1;
        if done(&s) || (hi - lo) <= T::epsilon() * (T::one() + mid.abs()) * T::lit(16.0) {
            return Ok(BoundaryCostSolution {
                mu: mid,
                solution: s,
                lambda_target,
                bracket_history: history,
                bracket_slope,
                evaluations,
                claim: UniquenessClaim::from_flags(flags),
            });
        }
        if s.lambda > lambda_target {
            lo = mid;
            sol_lo = s;
        } else {
            hi = mid;
            sol_hi = s;
        }
        history.push((lo, hi));
    }
    let _ = (&sol_lo, &sol_hi);
    Err(Error::NoConvergence {
        steps: settings.max_bisections,
        change: (hi - lo).to_f64_lossy(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Potential;

    fn kolmogorov() -> (SdeModel<f64>, DomainSpec<f64>) {
        (SdeModel::kolmogorov(Potential::quadratic(1.0), 1), DomainSpec::interval(1.0))
    }

    #[test]
    fn zero_and_constant_drivers() {
        let (m, d) = kolmogorov();
        let st = ErgodicSettings::new(GridSpec::new(41));
        let s = solve_ergodic(&m, &d, &DriverSpec::zero(), 0.0, &st).unwrap();
        assert!(s.lambda.abs() < 1e-12 && s.v.max_abs() < 1e-12);
        let s = solve_ergodic(&m, &d, &DriverSpec::constant(1.5), 0.0, &st).unwrap();
        assert!((s.lambda - 1.5).abs() < 1e-12 && s.v.max_abs() < 1e-10);
    }

    #[test]
    fn schemes_agree() {
        let (m, d) = kolmogorov();
        let st = ErgodicSettings::new(GridSpec::new(201))
            .with_scheme(ErgodicScheme::CrossCheck)
            .with_tol(1e-5);
        let s = solve_ergodic(&m, &d, &DriverSpec::composite(0.0, 1.0, 0.3), 0.4, &st).unwrap();
        assert!(s.diagnostics.cross_check_gap.unwrap() < 5e-5);
        assert_eq!(s.v.values[s.v.grid.reference()], 0.0);
        assert!(!s.diagnostics.alphas.is_empty());
    }

    #[test]
    fn inversion_round_trip() {
        let (m, d) = kolmogorov();
        let st = InversionSettings::new(ErgodicSettings::new(GridSpec::new(201)));
        let drv = DriverSpec::cosine(1.0);
        let target = solve_ergodic(&m, &d, &drv, 0.7, &st.ergodic).unwrap().lambda;
        let r = solve_boundary_cost(&m, &d, &drv, target, &st, None).unwrap();
        assert!((r.mu - 0.7).abs() < 1e-3, "{}", r.mu);
        for w in r.bracket_history.windows(2) {
            assert!(w[1].1 - w[1].0 < w[0].1 - w[0].0);
        }
        assert_eq!(r.claim, UniquenessClaim::Unverified);
    }
}
