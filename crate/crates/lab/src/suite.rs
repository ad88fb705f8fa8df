//! The reproduction suite: twelve numbered checks with pinned settings.

use std::sync::Arc;
use std::time::Instant;

use ebsde_core::control::{evaluate_policy, girsanov_weight_check, Control, ControlProblem, AffineCost, Policy, PolicySpec};
use ebsde_core::discounted::{lipschitz_bound, lipschitz_diagnostic};
use ebsde_core::dynamics::{
    deviation_probability, expected_k_rate, gibbs_expectation, occupation_histogram, penalized_moments,
    reflected_moments,
};
use ebsde_core::ergodic::InversionSettings;
use ebsde_core::grid::{ExactField, ValueGradient};
use ebsde_core::hypotheses::{estimate_driver_constants, estimate_eta, estimate_kolmogorov_constants, estimate_model_lipschitz};
use ebsde_core::verification::{bsde_residual, drift_shift_equivalence};
use ebsde_core::{
    check_all, lambda_of_mu, solve_boundary_cost, solve_discounted, solve_ergodic, BoundaryCost, CheckSettings,
    DomainSpec, DriverSpec, ErgodicScheme, ErgodicSettings, Error, GridSpec, McSettings, Potential, SdeModel,
    SolverSettings, StationaryStart,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::pipeline::{optimality_assertions, POLICY_HEADER};
use crate::report::csv_bytes;

type Result<T> = std::result::Result<T, Error>;

pub const TITLES: [&str; 12] = [
    "closed-form degenerate example",
    "Gibbs occupation histogram",
    "local-time rate",
    "discount bound",
    "Lipschitz bound",
    "monotone curve and slope bound",
    "round-trip inversion",
    "BSDE pathwise residual",
    "control optimality",
    "drift-shift equivalence",
    "penalization convergence",
    "deviation bound",
];

/// `E^ν[1 - x²]` for `U = x²/2` on `[-1, 1]`.
pub const GIBBS_K_RATE: f64 = 0.7088749052272069;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: usize,
    pub title: String,
    pub pass: bool,
    /// Headline quantity and the threshold it is compared with.
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
    pub seconds: f64,
    pub metrics: Value,
    pub error: Option<String>,
    #[serde(skip)]
    pub tables: Vec<(String, Vec<u8>)>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} {:<32} {}  {} = {:.4e} (threshold {:.4e}) {}",
            self.id,
            self.title,
            if self.pass { "PASS" } else { "FAIL" },
            self.metric,
            self.value,
            self.threshold,
            self.detail
        )
    }
}

/// What a criterion function hands back before timing is attached.
struct Check {
    pass: bool,
    metric: &'static str,
    value: f64,
    threshold: f64,
    detail: String,
    metrics: Value,
    tables: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub seed: u64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self { seed: 20240 }
    }
}

pub fn run_criterion(id: usize, opts: &SuiteOptions) -> CriterionResult {
    let t0 = Instant::now();
    let out = match id {
        1 => c01(),
        2 => c02(opts),
        3 => c03(opts),
        4 => c04(),
        5 => c05(),
        6 => c06(),
        7 => c07(),
        8 => c08(opts),
        9 => c09(opts),
        10 => c10(),
        11 => c11(opts),
        12 => c12(opts),
        _ => Err(Error::InvalidArgument(format!("no criterion {id}"))),
    };
    let seconds = t0.elapsed().as_secs_f64();
    let title = TITLES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown").to_string();
    match out {
        Ok(c) => CriterionResult {
            id,
            title,
            pass: c.pass,
            metric: c.metric.into(),
            value: c.value,
            threshold: c.threshold,
            detail: c.detail,
            seconds,
            metrics: c.metrics,
            error: None,
            tables: c.tables,
        },
        Err(e) => CriterionResult {
            id,
            title,
            pass: false,
            metric: "error".into(),
            value: f64::NAN,
            threshold: f64::NAN,
            detail: format!("[{}] {e}; {}", e.module(), e.remedy()),
            seconds,
            metrics: Value::Null,
            error: Some(e.to_string()),
            tables: Vec::new(),
        },
    }
}

pub fn run_all(ids: &[usize], opts: &SuiteOptions) -> Vec<CriterionResult> {
    ids.iter().map(|&i| run_criterion(i, opts)).collect()
}

/// One row per criterion.
pub fn table(results: &[CriterionResult]) -> Result<Vec<u8>> {
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.id.to_string(),
                r.title.clone(),
                if r.pass { "PASS" } else { "FAIL" }.to_string(),
                r.metric.clone(),
                r.value.to_string(),
                r.threshold.to_string(),
            ]
        })
        .collect();
    csv_bytes(&["id", "title", "status", "metric", "value", "threshold"], &rows)
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn interval() -> DomainSpec<f64> {
    DomainSpec::interval(1.0)
}

/// `U = x²/2`, `σ = √2`.
fn kolmogorov() -> SdeModel<f64> {
    SdeModel::kolmogorov(Potential::quadratic(1.0), 1)
}

/// `U = x²/4`, `σ = √2`: `-Lφ = 1 - x²/2`.
fn soft_kolmogorov() -> SdeModel<f64> {
    SdeModel::kolmogorov(Potential::quadratic(0.5), 1)
}

fn composite() -> DriverSpec<f64> {
    DriverSpec::composite(0.0, 1.0, 0.2)
}

fn ergodic(points: usize) -> ErgodicSettings<f64> {
    ErgodicSettings::new(GridSpec::new(points)).with_tol(1e-5)
}

fn c01() -> Result<Check> {
    let model = SdeModel::degenerate_diagonal(1);
    let dom = interval();
    let settings = ergodic(2001);
    let mut rows = Vec::new();
    let (mut worst_l, mut worst_v, mut worst_t) = (0.0f64, 0.0f64, 0.0f64);
    for mu in [-1.0, 0.0, 1.0] {
        let t0 = Instant::now();
        let sol = solve_ergodic(&model, &dom, &DriverSpec::zero(), mu, &settings)?;
        let secs = t0.elapsed().as_secs_f64();
        let cubic = |x: f64| -mu / 3.0 * x.abs().powi(3);
        let g = &sol.v.grid;
        let shift = cubic(sol.x_ref[0]);
        let err = (0..g.len())
            .filter(|&i| g.is_active(i))
            .map(|i| (sol.v.values[i] - (cubic(g.point(i)[0]) - shift)).abs())
            .fold(0.0, f64::max);
        worst_l = worst_l.max(sol.lambda.abs());
        worst_v = worst_v.max(err);
        worst_t = worst_t.max(secs);
        rows.push(vec![s(mu), s(sol.lambda), s(err)]);
    }
    Ok(Check {
        pass: worst_l <= 1e-3 && worst_v <= 5e-3 && worst_t < 10.0,
        metric: "max |v - cubic|",
        value: worst_v,
        threshold: 5e-3,
        detail: format!("max|lambda| {worst_l:.2e}, slowest solve {worst_t:.2}s"),
        metrics: json!({"max_abs_lambda": worst_l, "max_error": worst_v, "max_seconds": worst_t}),
        tables: vec![("c01_cubic.csv".into(), csv_bytes(&["mu", "lambda", "max_error"], &rows)?)],
    })
}

/// Simpson rule with `n` (odd) nodes.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / (n - 1) as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n - 1 {
        acc += f(a + h * i as f64) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

fn c02(opts: &SuiteOptions) -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let mc = McSettings::new(1250.0, 1e-3, 16, opts.seed);
    let hist = occupation_histogram(&model, &dom, 40, &mc, &StationaryStart::Gibbs)?;
    let w = |x: f64| (-x * x / 2.0).exp();
    let z = simpson(w, -1.0, 1.0, 4097);
    let emp = hist.density();
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (j, (&c, &d)) in hist.centers.iter().zip(&emp).enumerate() {
        let (a, b) = (c - hist.width / 2.0, c + hist.width / 2.0);
        let exact = simpson(w, a, b, 65) / z / hist.width;
        worst = worst.max((d - exact).abs());
        rows.push(vec![s(j), s(c), s(d), s(exact)]);
    }
    Ok(Check {
        pass: worst < 0.02,
        metric: "max bin density error",
        value: worst,
        threshold: 0.02,
        detail: format!("N = {z:.6}, {} paths x T = {}", mc.paths, mc.horizon),
        metrics: json!({"normalization": z, "max_error": worst, "paths": mc.paths, "horizon": mc.horizon}),
        tables: vec![("c02_histogram.csv".into(), csv_bytes(&["bin", "center", "empirical", "exact"], &rows)?)],
    })
}

fn c03(opts: &SuiteOptions) -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let oracle = -gibbs_expectation(&model, &dom, &|x: &[f64]| model.l_phi(&dom, x), 4097)?;
    let mc = McSettings::new(100.0, 1e-3, 64, opts.seed);
    let k = expected_k_rate(&model, &dom, &mc, &StationaryStart::Gibbs)?;
    let gap = (k.mean - GIBBS_K_RATE).abs();
    Ok(Check {
        pass: gap <= 3.0 * k.std_error && (oracle - GIBBS_K_RATE).abs() < 1e-9,
        metric: "|E[K_T]/T - E[1-x^2]|",
        value: gap,
        threshold: 3.0 * k.std_error,
        detail: format!("estimate {:.5} +- {:.5}, quadrature {oracle:.10}", k.mean, k.std_error),
        metrics: json!({"estimate": k, "oracle": GIBBS_K_RATE, "quadrature": oracle}),
        tables: Vec::new(),
    })
}

fn c04() -> Result<Check> {
    let cases = [
        ("kolmogorov-1d", interval(), kolmogorov(), 401),
        ("ou-disc", DomainSpec::ball(1.0, 2), SdeModel::ornstein_uhlenbeck(1.0, 1.0, 2), 41),
    ];
    let driver = DriverSpec::constant(1.0);
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (name, dom, model, n) in &cases {
        for alpha in [0.5, 0.1, 0.02] {
            let sol = solve_discounted(model, dom, &driver, alpha, 0.0, &SolverSettings::new(GridSpec::new(*n)))?;
            let scaled = alpha * sol.v.max_abs();
            worst = worst.max((scaled - 1.0).abs());
            rows.push(vec![s(name), s(alpha), s(scaled)]);
        }
    }
    Ok(Check {
        pass: worst <= 1e-6,
        metric: "max |alpha max|v| - 1|",
        value: worst,
        threshold: 1e-6,
        detail: String::new(),
        metrics: json!({"max_deviation": worst}),
        tables: vec![("c04_discount.csv".into(), csv_bytes(&["case", "alpha", "alpha_max_v"], &rows)?)],
    })
}

fn c05() -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let driver = DriverSpec::cosine(1.0);
    let eta = estimate_eta(&model, &dom, 33);
    let (_, k_sigma) = estimate_model_lipschitz(&model, &dom, 33);
    let est = estimate_driver_constants(&driver, &dom, 33);
    let bound = lipschitz_bound(driver.k_psi_x.max(est.k_psi_x), driver.k_psi_z.max(est.k_psi_z), k_sigma, eta)
        .ok_or_else(|| Error::InvalidArgument("dissipativity fails; no Lipschitz bound".into()))?;
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for alpha in [0.5, 0.1, 0.02] {
        let sol = solve_discounted(&model, &dom, &driver, alpha, 0.0, &SolverSettings::new(GridSpec::new(801)))?;
        let l = lipschitz_diagnostic(&sol.v);
        worst = worst.max(l);
        rows.push(vec![s(alpha), s(l)]);
    }
    let threshold = 1.05 * bound;
    Ok(Check {
        pass: worst <= threshold,
        metric: "max Lipschitz diagnostic",
        value: worst,
        threshold,
        detail: format!("eta {eta:.4}, bound {bound:.4}"),
        metrics: json!({"eta": eta, "k_sigma": k_sigma, "bound": bound, "max_diagnostic": worst}),
        tables: vec![("c05_lipschitz.csv".into(), csv_bytes(&["alpha", "diagnostic"], &rows)?)],
    })
}

const MUS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

fn c06() -> Result<Check> {
    let model = soft_kolmogorov();
    let dom = interval();
    let driver = composite();
    let curve = lambda_of_mu(&model, &dom, &driver, &MUS, &ergodic(801))?;
    let e_lphi = gibbs_expectation(&model, &dom, &|x: &[f64]| model.l_phi(&dom, x), 4097)?;
    let l0 = curve.lambda[2];
    let bound = 2.0 * driver.m_psi.max(driver.psi_bound.unwrap_or(0.0));
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (&mu, &l) in curve.mu.iter().zip(&curve.lambda) {
        let dev = (l - l0 - mu * e_lphi).abs();
        worst = worst.max(dev);
        rows.push(vec![s(mu), s(l), s(dev)]);
    }
    let monotone = curve.non_increasing();
    Ok(Check {
        pass: monotone && worst <= bound,
        metric: "max |lambda(mu) - lambda(0) - mu E[Lphi]|",
        value: worst,
        threshold: bound,
        detail: format!(
            "non-increasing {monotone}, strictly decreasing {}, E[Lphi] {e_lphi:.5}",
            curve.strictly_decreasing()
        ),
        metrics: json!({"mu": curve.mu, "lambda": curve.lambda, "e_nu_lphi": e_lphi, "slopes": curve.slopes()}),
        tables: vec![("c06_curve.csv".into(), csv_bytes(&["mu", "lambda", "deviation"], &rows)?)],
    })
}

fn c07() -> Result<Check> {
    let model = soft_kolmogorov();
    let dom = interval();
    let driver = composite();
    let settings = ergodic(801);
    let report = check_all(&model, &driver, &dom, &CheckSettings::default())?;
    let target = solve_ergodic(&model, &dom, &driver, 0.5, &settings)?.lambda;
    let mut inv = InversionSettings::new(settings.clone());
    inv.e_nu_lphi = Some(report.e_nu_lphi.mean);
    let sol = solve_boundary_cost(&model, &dom, &driver, target, &inv, Some(&report.flags))?;
    let gap = (sol.solution.lambda - target).abs();

    let pts = dom.sample_inside(65);
    let sup_minus_lphi = pts.iter().map(|x| -model.l_phi(&dom, x)).fold(f64::MIN, f64::max);
    let spread = driver.k_psi_z * report.sup_grad_phi_sigma;
    let (lo, hi) = (report.min_minus_lphi - spread, sup_minus_lphi + spread);
    let curve = lambda_of_mu(&model, &dom, &driver, &MUS, &settings)?;
    let mut slopes = curve.slopes();
    slopes.push(sol.bracket_slope);
    let in_bracket = lo > 0.0 && slopes.iter().all(|&k| k >= lo && k <= hi);
    let rows: Vec<Vec<String>> = sol.bracket_history.iter().map(|(m, l)| vec![s(m), s(l)]).collect();
    Ok(Check {
        pass: report.flags.f2_prime && gap < 2e-3 && in_bracket,
        metric: "|lambda(mu*) - lambda0|",
        value: gap,
        threshold: 2e-3,
        detail: format!(
            "mu* {:.6}, slopes in [{lo:.3}, {hi:.3}]: {in_bracket}, claim {:?}",
            sol.mu, sol.claim
        ),
        metrics: json!({
            "lambda_target": target,
            "mu_star": sol.mu,
            "evaluations": sol.evaluations,
            "slopes": slopes,
            "c_slope": lo,
            "c_slope_upper": hi,
            "f2_prime": report.flags.f2_prime,
            "claim": sol.claim,
        }),
        tables: vec![("c07_bracket.csv".into(), csv_bytes(&["mu", "lambda"], &rows)?)],
    })
}

fn cubic_field(mu: f64) -> ExactField<impl Fn(&[f64]) -> f64 + Send + Sync, impl Fn(&[f64]) -> Vec<f64> + Send + Sync> {
    ExactField {
        value: move |x: &[f64]| -mu / 3.0 * x[0].abs().powi(3),
        gradient: move |x: &[f64]| vec![-mu * x[0] * x[0].abs()],
    }
}

fn c08(opts: &SuiteOptions) -> Result<Check> {
    let model = SdeModel::degenerate_diagonal(1);
    let dom = interval();
    let mu = 1.0;
    let field = cubic_field(mu);
    let start = StationaryStart::Fixed(vec![0.8]);
    let mut rows = Vec::new();
    let mut stats = Vec::new();
    let mut unbiased = true;
    for h in [1e-2, 1e-3] {
        let mc = McSettings::new(2.0, h, 2000, opts.seed);
        let r = bsde_residual(&field, 0.0, mu, &model, &dom, &DriverSpec::zero(), &mc, &start)?;
        unbiased &= r.mean.within(0.0, 3.0);
        rows.push(vec![s(h), s(r.mean.mean), s(r.mean.std_error), s(r.mean_abs.mean), s(r.mean_abs.std_error)]);
        stats.push(r);
    }
    let ratio = stats[1].mean_abs.mean / stats[0].mean_abs.mean;
    Ok(Check {
        pass: unbiased && ratio <= 0.5,
        metric: "E|R| ratio h=1e-3 / h=1e-2",
        value: ratio,
        threshold: 0.5,
        detail: format!(
            "means {:.2e} +- {:.1e}, {:.2e} +- {:.1e}",
            stats[0].mean.mean, stats[0].mean.std_error, stats[1].mean.mean, stats[1].mean.std_error
        ),
        metrics: json!({
            "mean": [stats[0].mean, stats[1].mean],
            "mean_abs": [stats[0].mean_abs, stats[1].mean_abs],
            "ratio": ratio,
        }),
        tables: vec![(
            "c08_bsde.csv".into(),
            csv_bytes(&["h", "mean", "mean_se", "mean_abs", "mean_abs_se"], &rows)?,
        )],
    })
}

/// Two drift directions `±0.25` with running costs `0.2 ± 0.3x` and
/// boundary cost `0.5x`.
pub fn two_control_problem() -> ControlProblem<f64> {
    let c = |name: &str, r: f64, slope: f64| Control {
        name: name.into(),
        r: vec![r],
        cost: AffineCost { constant: 0.2, linear: vec![slope] },
    };
    ControlProblem::new(
        vec![c("right", 0.25, 0.3), c("left", -0.25, -0.3)],
        BoundaryCost::Linear { c: 0.0, a: vec![0.5] },
    )
    .expect("valid control set")
}

pub fn heuristic_policies() -> Vec<Policy<f64>> {
    vec![
        Policy::constant(0),
        Policy::constant(1),
        Policy::Spec(PolicySpec::ThresholdX { axis: 0, threshold: 0.0, below: 0, above: 1 }),
        Policy::Spec(PolicySpec::ThresholdX { axis: 0, threshold: 0.0, below: 1, above: 0 }),
        Policy::Spec(PolicySpec::ThresholdZ { axis: 0, threshold: 0.4, below: 1, above: 0 }),
    ]
}

fn c09(opts: &SuiteOptions) -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let problem = two_control_problem();
    let mu = 0.3;
    let sol = solve_ergodic(&model, &dom, &problem.to_driver(&dom), mu, &ergodic(801))?;
    let field: Arc<dyn ValueGradient<f64>> = Arc::new(sol.v.clone());
    let mc = McSettings::new(100.0, 2e-3, 128, opts.seed);
    let start = StationaryStart::BurnIn { duration: 5.0 };
    let mut policies = vec![Policy::optimal()];
    policies.extend(heuristic_policies());
    let costs = policies
        .iter()
        .map(|p| evaluate_policy(&model, &dom, &problem, p, Some(field.clone()), sol.lambda, mu, &mc, &start))
        .collect::<Result<Vec<_>>>()?;
    let checks = optimality_assertions(&costs, sol.lambda, mu, 5e-3, 1e-2);
    let failed: Vec<&str> = checks.iter().filter(|a| !a.pass).map(|a| a.name.as_str()).collect();
    let girsanov = girsanov_weight_check(
        &model,
        &dom,
        &problem,
        &policies[1],
        Some(field.clone()),
        mu,
        &McSettings::new(5.0, 2e-3, 1000, opts.seed),
        &start,
    );
    let opt = &costs[0];
    let rows: Vec<Vec<String>> = costs
        .iter()
        .map(|c| {
            let (jm, js) = c.j.map_or((f64::NAN, f64::NAN), |j| (j.mean, j.std_error));
            vec![
                c.policy.clone(),
                s(c.horizon),
                s(c.i.mean),
                s(c.i.std_error),
                s(jm),
                s(js),
                s(c.k_rate.mean),
                s(c.k_rate.std_error),
                s(c.max_equality_gap),
            ]
        })
        .collect();
    Ok(Check {
        pass: failed.is_empty(),
        metric: "|I(optimal) - lambda|",
        value: (opt.i.mean - sol.lambda).abs(),
        threshold: 3.0 * opt.i.std_error + 5e-3,
        detail: if failed.is_empty() {
            format!("lambda {:.5}, J(optimal) {:.5}", sol.lambda, opt.j.map_or(f64::NAN, |j| j.mean))
        } else {
            format!("failed: {}", failed.join(", "))
        },
        metrics: json!({
            "lambda": sol.lambda,
            "mu": mu,
            "assertions": checks,
            "girsanov": girsanov.map(|g| serde_json::to_value(g).unwrap_or(Value::Null)).unwrap_or_else(|e| json!(e.to_string())),
        }),
        tables: vec![("c09_policies.csv".into(), csv_bytes(&POLICY_HEADER, &rows)?)],
    })
}

fn c10() -> Result<Check> {
    let model = soft_kolmogorov();
    let dom = interval();
    let driver = composite();
    let settings = ergodic(801).with_scheme(ErgodicScheme::Direct);
    let mut rows = Vec::new();
    let (mut l_gap, mut e_gap) = (0.0f64, 0.0f64);
    for xi in [0.0, 0.5] {
        let r = drift_shift_equivalence(&model, &dom, &driver, 0.5, xi, &settings)?;
        l_gap = l_gap.max(r.lambda_gap);
        e_gap = e_gap.max(r.eta_gap);
        rows.push(vec![s(xi), s(r.lambda), s(r.lambda_shifted), s(r.eta), s(r.eta_shifted), s(r.v_gap)]);
    }
    Ok(Check {
        pass: l_gap <= 2e-3 && e_gap <= 1e-9,
        metric: "max lambda gap",
        value: l_gap,
        threshold: 2e-3,
        detail: format!("max eta gap {e_gap:.2e}"),
        metrics: json!({"lambda_gap": l_gap, "eta_gap": e_gap}),
        tables: vec![(
            "c10_drift_shift.csv".into(),
            csv_bytes(&["xi", "lambda", "lambda_shifted", "eta", "eta_shifted", "v_gap"], &rows)?,
        )],
    })
}

/// `E[X²]` under `∝ exp(-x²/2 - n d²(x, [-1, 1]))`, by quadrature.
pub fn penalized_second_moment(n: f64) -> f64 {
    let u = |x: f64| {
        let d = (x.abs() - 1.0).max(0.0);
        (-x * x / 2.0 - n * d * d).exp()
    };
    let l = 1.0 + 12.0 / n.sqrt();
    let z = simpson(u, -l, l, 20001);
    simpson(|x| x * x * u(x), -l, l, 20001) / z
}

fn c11(opts: &SuiteOptions) -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let mc = McSettings::new(200.0, 1e-3, 32, opts.seed);
    let reflected = reflected_moments(&model, &dom, &mc, &StationaryStart::Gibbs)?;
    let mut rows = Vec::new();
    let mut gaps1 = Vec::new();
    let mut gaps2 = Vec::new();
    for n in [1.0, 4.0, 16.0, 64.0] {
        let m = penalized_moments(&model, &dom, n, 5.0, &mc)?;
        gaps1.push((m.first.mean - reflected.first.mean).abs());
        gaps2.push((m.second.mean - reflected.second.mean).abs());
        rows.push(vec![
            s(n),
            s(m.first.mean),
            s(m.first.std_error),
            s(m.second.mean),
            s(m.second.std_error),
            s(penalized_second_moment(n)),
        ]);
    }
    let trend = gaps2.windows(2).all(|w| w[1] <= w[0]) && gaps2[3] < gaps2[0];
    let last = gaps1[3].max(gaps2[3]);
    let w = |x: f64| (-x * x / 2.0).exp();
    let intrinsic = penalized_second_moment(64.0) - simpson(|x| x * x * w(x), -1.0, 1.0, 4097) / simpson(w, -1.0, 1.0, 4097);
    Ok(Check {
        pass: trend && last < 0.02,
        metric: "final moment gap (n = 64)",
        value: last,
        threshold: 0.02,
        detail: format!(
            "monotone trend {trend}; exact penalized-law gap at n = 64 is {intrinsic:.4}, so the threshold is out of reach"
        ),
        metrics: json!({
            "reflected": reflected,
            "first_gaps": gaps1,
            "second_gaps": gaps2,
            "exact_gap_n64": intrinsic,
        }),
        tables: vec![(
            "c11_penalization.csv".into(),
            csv_bytes(&["n", "first", "first_se", "second", "second_se", "second_exact"], &rows)?,
        )],
    })
}

fn c12(opts: &SuiteOptions) -> Result<Check> {
    let model = kolmogorov();
    let dom = interval();
    let kc = estimate_kolmogorov_constants(&model, &dom, 33)?;
    let f = |x: &[f64]| -model.l_phi(&dom, x);
    let mean = gibbs_expectation(&model, &dom, &f, 4097)?;
    let eps = 0.2;
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for t in [5.0, 10.0, 20.0] {
        let mc = McSettings::new(t, 2e-3, 1000, opts.seed);
        let p = deviation_probability(&model, &dom, &f, mean, eps, &mc, &StationaryStart::Gibbs)?;
        let bound = (-kc.c * eps * eps * t / (kc.delta * kc.delta)).exp();
        worst = worst.max(p.mean - bound - 3.0 * p.std_error);
        rows.push(vec![s(t), s(p.mean), s(p.std_error), s(bound)]);
    }
    Ok(Check {
        pass: worst <= 0.0,
        metric: "max P(A_T) - bound - 3 SE",
        value: worst,
        threshold: 0.0,
        detail: format!("c {:.4}, delta {:.4}", kc.c, kc.delta),
        metrics: json!({"c": kc.c, "delta": kc.delta, "mean": mean, "eps": eps}),
        tables: vec![("c12_deviation.csv".into(), csv_bytes(&["horizon", "probability", "se", "bound"], &rows)?)],
    })
}

