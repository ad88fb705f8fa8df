//! Ergodic control on a finite control set: Hamiltonian, feedback policies,
//! and Monte Carlo estimates of the time-average cost `I` and the
//! boundary-normalized cost `J`.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::driver::{BoundaryCost, BoundaryFn, DriverSpec};
use crate::dynamics::{simulate_streaming, step_count, McSettings, SdeModel, StartRule, StationaryStart};
use crate::error::{Error, Result};
use crate::geometry::DomainSpec;
use crate::grid::ValueGradient;
use crate::scalar::{dot, norm, row_mat, Real};
use crate::stats::{path_rng, ratio_estimate, Estimate};

/// `L(x, u) = constant + linearᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AffineCost<T> {
    pub constant: T,
    #[serde(default)]
    pub linear: Vec<T>,
}

impl<T: Real> AffineCost<T> {
    pub fn eval(&self, x: &[T]) -> T {
        if self.linear.is_empty() {
            self.constant
        } else {
            self.constant + dot(&self.linear, x)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct Control<T> {
    #[serde(default)]
    pub name: String,
    /// `R(u)`, a vector in `R^d`.
    pub r: Vec<T>,
    pub cost: AffineCost<T>,
}

/// Finite control set with running costs `L(x, u)`, drift directions
/// `R(u)` and a boundary cost `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ControlProblem<T> {
    pub controls: Vec<Control<T>>,
    #[serde(default)]
    pub boundary: BoundaryCost<T>,
}

impl<T: Real> ControlProblem<T> {
    pub fn new(controls: Vec<Control<T>>, boundary: BoundaryCost<T>) -> Result<Self> {
        let p = Self { controls, boundary };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .controls
            .first()
            .ok_or_else(|| Error::InvalidArgument("control set is empty".into()))?;
        let d = first.r.len();
        for c in &self.controls {
            if c.r.len() != d || !(c.cost.linear.is_empty() || c.cost.linear.len() == d) {
                return Err(Error::InvalidArgument(format!("control {:?} has inconsistent dimension", c.name)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.controls[0].r.len()
    }

    /// `M_R = max |R(u)|`.
    pub fn m_r(&self) -> T {
        self.controls.iter().map(|c| norm(&c.r)).fold(T::zero(), T::max)
    }

    /// `max |L(x, u)|` over sampled points of Ḡ.
    pub fn m_l(&self, domain: &DomainSpec<T>) -> T {
        domain
            .sample_inside(33)
            .iter()
            .flat_map(|x| self.controls.iter().map(move |c| c.cost.eval(x).abs()))
            .fold(T::zero(), T::max)
    }

    /// `K_{L,x} = max |∇_x L|`.
    pub fn k_l(&self) -> T {
        self.controls.iter().map(|c| norm(&c.cost.linear)).fold(T::zero(), T::max)
    }

    /// `min_u L(x, u) + z R(u)` and the first minimizing index.
    pub fn hamiltonian(&self, x: &[T], z: &[T]) -> (T, usize) {
        let mut best = (T::infinity(), 0);
        for (i, c) in self.controls.iter().enumerate() {
            let v = c.cost.eval(x) + dot(z, &c.r);
            if v < best.0 {
                best = (v, i);
            }
        }
        best
    }

    /// The Hamiltonian as a driver, with `K_{ψ,z} = M_R` and the boundary
    /// cost attached.
    pub fn to_driver(&self, domain: &DomainSpec<T>) -> DriverSpec<T> {
        let me = self.clone();
        let zero = vec![T::zero(); self.dim()];
        let m_psi = domain
            .sample_inside(33)
            .iter()
            .map(|x| self.hamiltonian(x, &zero).0.abs())
            .fold(T::zero(), T::max);
        DriverSpec::new(
            "hamiltonian",
            move |x: &[T], z: &[T]| me.hamiltonian(x, z).0,
            |_| T::zero(),
            self.k_l(),
            self.m_r(),
            m_psi,
            None,
        )
        .with_boundary(self.boundary.clone())
    }

    fn boundary_fn(&self) -> BoundaryFn<T> {
        self.boundary.clone().into_fn()
    }
}

/// Serializable policy description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec<T> {
    Constant { control: usize },
    /// `below` if `x[axis] < threshold`, else `above`.
    ThresholdX { axis: usize, threshold: T, below: usize, above: usize },
    /// `below` if `z[axis] < threshold`, else `above` (`z = ζ(x)`).
    ThresholdZ { axis: usize, threshold: T, below: usize, above: usize },
    /// Hamiltonian argmin at `(x, ζ(x))`.
    Optimal,
}

pub type PolicyFn<T> = Arc<dyn Fn(&[T], &[T]) -> usize + Send + Sync>;

/// Feedback `(x, z) ↦ u` with values in the control set.
#[derive(Clone)]
pub enum Policy<T> {
    Spec(PolicySpec<T>),
    Custom { label: String, rule: PolicyFn<T> },
}

impl<T: Real> fmt::Debug for Policy<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Policy::Spec(s) => write!(f, "{s:?}"),
            Policy::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

impl<T: Real> From<PolicySpec<T>> for Policy<T> {
    fn from(s: PolicySpec<T>) -> Self {
        Policy::Spec(s)
    }
}

impl<T: Real> Policy<T> {
    pub fn constant(control: usize) -> Self {
        PolicySpec::Constant { control }.into()
    }

    pub fn optimal() -> Self {
        PolicySpec::Optimal.into()
    }

    pub fn custom(label: impl Into<String>, rule: impl Fn(&[T], &[T]) -> usize + Send + Sync + 'static) -> Self {
        Policy::Custom {
            label: label.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Policy::Spec(PolicySpec::Constant { control }) => format!("constant_{control}"),
            Policy::Spec(PolicySpec::ThresholdX { threshold, below, above, .. }) => {
                format!("threshold_x({threshold};{below}|{above})")
            }
            Policy::Spec(PolicySpec::ThresholdZ { threshold, below, above, .. }) => {
                format!("threshold_z({threshold};{below}|{above})")
            }
            Policy::Spec(PolicySpec::Optimal) => "optimal".into(),
            Policy::Custom { label, .. } => label.clone(),
        }
    }

    /// Whether the policy reads `z = ζ(x)`. Custom rules see `z = 0` when
    /// no value function is supplied.
    pub fn needs_gradient(&self) -> bool {
        matches!(self, Policy::Spec(PolicySpec::Optimal) | Policy::Spec(PolicySpec::ThresholdZ { .. }))
    }

    /// Control index at `(x, z)`; always a valid index of `problem`.
    pub fn choose(&self, problem: &ControlProblem<T>, x: &[T], z: &[T]) -> usize {
        let n = problem.controls.len();
        let u = match self {
            Policy::Spec(PolicySpec::Constant { control }) => *control,
            Policy::Spec(PolicySpec::ThresholdX { axis, threshold, below, above }) => {
                if x[*axis] < *threshold {
                    *below
                } else {
                    *above
                }
            }
            Policy::Spec(PolicySpec::ThresholdZ { axis, threshold, below, above }) => {
                if z[*axis] < *threshold {
                    *below
                } else {
                    *above
                }
            }
            Policy::Spec(PolicySpec::Optimal) => problem.hamiltonian(x, z).1,
            Policy::Custom { rule, .. } => rule(x, z),
        };
        u.min(n - 1)
    }

    fn validate(&self, problem: &ControlProblem<T>) -> Result<()> {
        let n = problem.controls.len();
        let ok = match self {
            Policy::Spec(PolicySpec::Constant { control }) => *control < n,
            Policy::Spec(PolicySpec::ThresholdX { axis, below, above, .. })
            | Policy::Spec(PolicySpec::ThresholdZ { axis, below, above, .. }) => {
                *below < n && *above < n && *axis < problem.dim()
            }
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("policy {} refers to a missing control", self.label())))
        }
    }
}

/// Model with drift `b + σR(u(x, ζ(x)))`: the dynamics under the control.
pub fn controlled_model<T: Real>(
    model: &SdeModel<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
) -> Result<SdeModel<T>> {
    policy.validate(problem)?;
    if policy.needs_gradient() && field.is_none() {
        return Err(Error::InvalidArgument(format!("policy {} needs a value function", policy.label())));
    }
    let (m, p, pol) = (model.clone(), problem.clone(), policy.clone());
    let d = model.dim();
    Ok(model.with_extra_drift(format!("{}+control[{}]", model.label, policy.label()), move |x, out| {
        let s = m.sigma(x);
        let z = match &field {
            Some(f) => row_mat(&f.gradient(x), &s),
            None => vec![T::zero(); d],
        };
        let r = &p.controls[pol.choose(&p, x, &z)].r;
        for i in 0..d {
            out[i] = (0..d).map(|j| s[i * d + j] * r[j]).sum();
        }
    }))
}

/// Estimates of both ergodic costs from one batch of controlled paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct PolicyCosts<T> {
    pub policy: String,
    pub horizon: T,
    /// `(1/T)[Σ L h + Σ (g - μ) ΔK]`.
    pub i: Estimate<T>,
    /// `E[Σ (L - λ) h + Σ g ΔK] / E[K_T]`, or `None` if `K_T` is degenerate.
    pub j: Option<Estimate<T>>,
    pub k_rate: Estimate<T>,
    /// `max (L + ζR - ψ)(X_i)` along the paths; zero for the optimal feedback.
    pub max_equality_gap: T,
}

struct PathCost<T> {
    running: T,
    flux: T,
    boundary: T,
    k: T,
    gap: T,
    log_weight: T,
}

/// Simulates `mc.paths` paths of the controlled process. With `reweight`,
/// paths follow the base dynamics and carry the Girsanov log-weight instead.
#[allow(clippy::too_many_arguments)]
fn simulate_costs<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    mu: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
    reweight: bool,
) -> Result<Vec<PathCost<T>>> {
    let n = step_count(mc.horizon, mc.h)?;
    let controlled = controlled_model(model, problem, policy, field.clone())?;
    let rule = StartRule::resolve(start, &controlled, domain, mc.h)?;
    let dynamics = if reweight { model } else { &controlled };
    let g = problem.boundary_fn();
    let d = model.dim();
    let h = mc.h;
    let sh = h.sqrt();
    (0..mc.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(mc.seed, p as u64);
            let x0 = rule.draw(&controlled, domain, h, mc.scheme, &mut rng)?;
            let mut c = PathCost {
                running: T::zero(),
                flux: T::zero(),
                boundary: T::zero(),
                k: T::zero(),
                gap: T::zero(),
                log_weight: T::zero(),
            };
            let mut s = vec![T::zero(); d * d];
            simulate_streaming(dynamics, domain, &x0, n, h, mc.scheme, &mut rng, |st| {
                let z = match &field {
                    Some(f) => {
                        model.sigma_into(st.x, &mut s);
                        row_mat(&f.gradient(st.x), &s)
                    }
                    None => vec![T::zero(); d],
                };
                let u = policy.choose(problem, st.x, &z);
                let ctl = &problem.controls[u];
                let l = ctl.cost.eval(st.x);
                c.running = c.running + l * h;
                if field.is_some() {
                    let gap = l + dot(&z, &ctl.r) - problem.hamiltonian(st.x, &z).0;
                    c.gap = c.gap.max(gap);
                }
                if st.dk > T::zero() {
                    let gx = g(&domain.nearest_boundary_point(st.next).unwrap_or_else(|_| st.next.to_vec()));
                    c.flux = c.flux + (gx - mu) * st.dk;
                    c.boundary = c.boundary + gx * st.dk;
                    c.k = c.k + st.dk;
                }
                if reweight {
                    let r2 = dot(&ctl.r, &ctl.r);
                    c.log_weight = c.log_weight + dot(&ctl.r, st.noise) * sh - r2 * h / T::lit(2.0);
                }
            })?;
            Ok(c)
        })
        .collect()
}

/// Estimates `I` and `J` for `policy` at horizon `mc.horizon` under the
/// drift-shifted dynamics. `J` is `None` when `E[K_T]` is within 3 standard
/// errors of zero.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_policy<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    lambda: T,
    mu: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<PolicyCosts<T>> {
    let per = simulate_costs(model, domain, problem, policy, field, mu, mc, start, false)?;
    let t = mc.horizon;
    let i: Vec<T> = per.iter().map(|c| (c.running + c.flux) / t).collect();
    let num: Vec<T> = per.iter().map(|c| c.running - lambda * t + c.boundary).collect();
    let k: Vec<T> = per.iter().map(|c| c.k).collect();
    let k_est = Estimate::from_samples(&k);
    let j = (k_est.mean > T::lit(3.0) * k_est.std_error && k_est.mean > T::zero()).then(|| ratio_estimate(&num, &k));
    let rates: Vec<T> = k.iter().map(|&v| v / t).collect();
    Ok(PolicyCosts {
        policy: policy.label(),
        horizon: t,
        i: Estimate::from_samples(&i),
        j,
        k_rate: Estimate::from_samples(&rates),
        max_equality_gap: per.iter().map(|c| c.gap).fold(T::zero(), T::max),
    })
}

/// Monte Carlo estimate of `I(ρ)`.
#[allow(clippy::too_many_arguments)]
pub fn cost_i<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    mu: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Estimate<T>> {
    Ok(evaluate_policy(model, domain, problem, policy, field, T::zero(), mu, mc, start)?.i)
}

/// Monte Carlo estimate of `J(ρ)`; `DegenerateLocalTime` when the boundary
/// is (statistically) never reached.
#[allow(clippy::too_many_arguments)]
pub fn cost_j<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    lambda: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Estimate<T>> {
    let c = evaluate_policy(model, domain, problem, policy, field, lambda, T::zero(), mc, start)?;
    c.j.ok_or(Error::DegenerateLocalTime {
        estimate: (c.k_rate.mean * c.horizon).to_f64_lossy(),
        std_error: (c.k_rate.std_error * c.horizon).to_f64_lossy(),
    })
}

/// `evaluate_policy` at `T`, `2T`, `4T`.
#[allow(clippy::too_many_arguments)]
pub fn stabilization<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    lambda: T,
    mu: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<Vec<PolicyCosts<T>>> {
    [1.0, 2.0, 4.0]
        .iter()
        .map(|&f| {
            let mut m = mc.clone();
            m.horizon = mc.horizon * T::lit(f);
            evaluate_policy(model, domain, problem, policy, field.clone(), lambda, mu, &m, start)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct GirsanovReport<T> {
    /// `I` under the drift-shifted dynamics.
    pub shifted: Estimate<T>,
    /// `E[Γ_T · I]` under the base dynamics.
    pub reweighted: Estimate<T>,
    pub mean_weight: Estimate<T>,
    pub effective_sample_size: T,
    /// `|shifted - reweighted| ≤ 3 √(se₁² + se₂²)`.
    pub agree: bool,
}

/// Cross-checks the drift-shifted estimate of `I` against Girsanov
/// reweighting of base-dynamics paths.
#[allow(clippy::too_many_arguments)]
pub fn girsanov_weight_check<T: Real>(
    model: &SdeModel<T>,
    domain: &DomainSpec<T>,
    problem: &ControlProblem<T>,
    policy: &Policy<T>,
    field: Option<Arc<dyn ValueGradient<T>>>,
    mu: T,
    mc: &McSettings<T>,
    start: &StationaryStart<T>,
) -> Result<GirsanovReport<T>> {
    let t = mc.horizon;
    let direct = simulate_costs(model, domain, problem, policy, field.clone(), mu, mc, start, false)?;
    let base = simulate_costs(model, domain, problem, policy, field, mu, mc, start, true)?;
    let w: Vec<T> = base.iter().map(|c| c.log_weight.exp()).collect();
    let sw: T = w.iter().copied().sum();
    let sw2: T = w.iter().map(|&x| x * x).sum();
    let ess = sw * sw / sw2;
    let paths = mc.paths;
    if ess < T::lit(0.05) * T::from_usize_lossy(paths) {
        return Err(Error::WeightDegeneracy {
            ess: ess.to_f64_lossy(),
            paths,
        });
    }
    let shifted = Estimate::from_samples(&direct.iter().map(|c| (c.running + c.flux) / t).collect::<Vec<_>>());
    let weighted: Vec<T> = base
        .iter()
        .zip(&w)
        .map(|(c, &wi)| wi * (c.running + c.flux) / t)
        .collect();
    let reweighted = Estimate::from_samples(&weighted);
    let se = (shifted.std_error * shifted.std_error + reweighted.std_error * reweighted.std_error).sqrt();
    Ok(GirsanovReport {
        agree: (shifted.mean - reweighted.mean).abs() <= T::lit(3.0) * se,
        shifted,
        reweighted,
        mean_weight: Estimate::from_samples(&w),
        effective_sample_size: ess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Potential;

    fn two_controls() -> ControlProblem<f64> {
        ControlProblem::new(
            vec![
                Control {
                    name: "a".into(),
                    r: vec![1.0],
                    cost: AffineCost { constant: 0.0, linear: vec![] },
                },
                Control {
                    name: "b".into(),
                    r: vec![-1.0],
                    cost: AffineCost { constant: 1.0, linear: vec![] },
                },
            ],
            BoundaryCost::Zero,
        )
        .unwrap()
    }

    #[test]
    fn hamiltonian_switches_at_one_half() {
        let p = two_controls();
        for &z in &[-1.0, 0.2, 0.49, 0.5, 0.51, 2.0] {
            let (v, u) = p.hamiltonian(&[0.0], &[z]);
            assert!((v - f64::min(z, 1.0 - z)).abs() < 1e-15);
            assert_eq!(u, if z <= 0.5 { 0 } else { 1 }, "z = {z}");
        }
        assert_eq!(p.m_r(), 1.0);
    }

    #[test]
    fn constant_cost_is_recovered_exactly() {
        let p = ControlProblem::new(
            vec![Control {
                name: "k".into(),
                r: vec![0.3],
                cost: AffineCost { constant: 0.7, linear: vec![] },
            }],
            BoundaryCost::Zero,
        )
        .unwrap();
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        let d = DomainSpec::interval(1.0);
        let mc = McSettings::new(1.0, 0.01, 16, 5);
        let c: PolicyCosts<f64> = evaluate_policy(&m, &d, &p, &Policy::constant(0), None, 0.7, 0.0, &mc, &StationaryStart::Fixed(vec![0.0])).unwrap();
        assert!((c.i.mean - 0.7).abs() < 1e-12 && c.i.std_error < 1e-12);
    }

    #[test]
    fn zero_drift_direction_gives_unit_weights() {
        let mut p = two_controls();
        p.controls[0].r = vec![0.0];
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        let d = DomainSpec::interval(1.0);
        let mc = McSettings::new(1.0, 0.01, 32, 5);
        let r = girsanov_weight_check(&m, &d, &p, &Policy::constant(0), None, 0.0, &mc, &StationaryStart::Fixed(vec![0.2])).unwrap();
        assert!((r.mean_weight.mean - 1.0).abs() < 1e-12);
        assert!((r.shifted.mean - r.reweighted.mean).abs() < 1e-12);
    }

    #[test]
    fn optimal_policy_needs_a_field() {
        let m = SdeModel::kolmogorov(Potential::quadratic(1.0), 1);
        assert!(controlled_model(&m, &two_controls(), &Policy::optimal(), None).is_err());
        assert!(controlled_model(&m, &two_controls(), &Policy::constant(5), None).is_err());
    }

    #[test]
    fn policy_spec_json() {
        let s: PolicySpec<f64> = serde_json::from_str(r#"{"kind":"threshold_z","axis":0,"threshold":0.5,"below":0,"above":1}"#).unwrap();
        let p = Policy::from(s);
        assert_eq!(p.choose(&two_controls(), &[0.0], &[0.7]), 1);
    }
}
