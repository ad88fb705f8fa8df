//! The single-config pipelines behind `check`, `solve`, `curve`, `invert`,
//! `verify` and `control`.

use std::sync::Arc;

use ebsde_core::control::{evaluate_policy, girsanov_weight_check, Policy, PolicyCosts};
use ebsde_core::ergodic::{InversionSettings, LambdaCurve};
use ebsde_core::grid::{ExactField, ValueGradient};
use ebsde_core::hypotheses::expected_lphi;
use ebsde_core::verification::{bsde_residual, drift_shift_equivalence, lambda_monte_carlo, solution_residual};
use ebsde_core::{
    check_all, lambda_of_mu, solve_boundary_cost, solve_ergodic, CheckSettings, ErgodicSettings,
    ErgodicSolution, Error, GridSpec, McSettings,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Config, ExactSolution};
use crate::report::{csv_bytes, Assertion, Outcome};

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Check,
    Solve,
    Curve,
    Invert,
    Verify,
    Control,
}

pub fn run(pipeline: Pipeline, cfg: &Config) -> Result<Outcome> {
    match pipeline {
        Pipeline::Check => check(cfg),
        Pipeline::Solve => solve(cfg),
        Pipeline::Curve => curve(cfg),
        Pipeline::Invert => invert(cfg),
        Pipeline::Verify => verify(cfg),
        Pipeline::Control => control(cfg),
    }
}

fn ergodic_settings(cfg: &Config) -> ErgodicSettings<f64> {
    ErgodicSettings::new(GridSpec::new(cfg.run.grid))
        .with_scheme(cfg.run.scheme)
        .with_tol(cfg.run.tol)
}

fn mc_settings(cfg: &Config) -> McSettings<f64> {
    McSettings::new(cfg.run.horizon, cfg.run.h, cfg.run.paths, cfg.run.seed)
}

fn to_value<S: Serialize>(s: &S) -> Value {
    serde_json::to_value(s).unwrap_or(Value::Null)
}

fn solution_csv(sol: &ErgodicSolution<f64>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    sol.write_csv(&mut buf)?;
    Ok(buf)
}

/// Max-norm distance of the normalized solution to the closed form.
fn exact_error(sol: &ErgodicSolution<f64>, exact: ExactSolution) -> f64 {
    let g = &sol.v.grid;
    let f = exact_value(exact, sol.mu);
    let shift = f(&sol.x_ref);
    (0..g.len())
        .filter(|&i| g.is_active(i))
        .map(|i| (sol.v.values[i] - (f(&g.point(i)) - shift)).abs())
        .fold(0.0, f64::max)
}

fn exact_value(exact: ExactSolution, mu: f64) -> impl Fn(&[f64]) -> f64 {
    match exact {
        ExactSolution::Cubic => move |x: &[f64]| -mu / 3.0 * x.iter().map(|v| v * v).sum::<f64>().powf(1.5),
    }
}

fn exact_field(exact: ExactSolution, mu: f64) -> Arc<dyn ValueGradient<f64>> {
    match exact {
        ExactSolution::Cubic => Arc::new(ExactField {
            value: exact_value(exact, mu),
            gradient: move |x: &[f64]| {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                x.iter().map(|&xi| -mu * r * xi).collect::<Vec<_>>()
            },
        }),
    }
}

fn lambda_assertion(cfg: &Config, lambda: f64, out: &mut Vec<Assertion>) {
    if let Some(t) = cfg.run.expect.lambda {
        out.push(Assertion::at_most("lambda", (lambda - t.value).abs(), t.tol));
    }
}

pub fn check(cfg: &Config) -> Result<Outcome> {
    let settings = CheckSettings {
        density: cfg.run.density,
        quadrature_resolution: 4097,
        mc: mc_settings(cfg),
    };
    let report = check_all(&cfg.build_model(), &cfg.build_driver(), &cfg.domain, &settings)?;
    let flags = to_value(&report.flags);
    let mut assertions = Vec::new();
    for (name, want) in &cfg.run.expect.flags {
        let got = flags.get(name).cloned().unwrap_or(Value::Null);
        assertions.push(Assertion::flag(name, got.as_bool(), *want));
    }
    let mut rows = Vec::new();
    if let Value::Object(m) = &flags {
        for (k, v) in m {
            rows.push(vec![k.clone(), v.to_string()]);
        }
    }
    let mut out = Outcome::new("check", to_value(&report), assertions);
    out.file("flags.csv", csv_bytes(&["flag", "value"], &rows)?);
    Ok(out)
}

pub fn solve(cfg: &Config) -> Result<Outcome> {
    let model = cfg.build_model();
    let driver = cfg.build_driver();
    let sol = solve_ergodic(&model, &cfg.domain, &driver, cfg.run.mu, &ergodic_settings(cfg))?;
    let res = solution_residual(&sol, &model, &cfg.domain, &driver)?;
    let mut assertions = Vec::new();
    lambda_assertion(cfg, sol.lambda, &mut assertions);
    let err = cfg.run.exact.map(|e| exact_error(&sol, e));
    if let (Some(bound), Some(e)) = (cfg.run.expect.exact_error, err) {
        assertions.push(Assertion::at_most("exact_error", e, bound));
    } else if cfg.run.expect.exact_error.is_some() {
        assertions.push(Assertion::missing("exact_error", "run.exact is not set"));
    }
    if let Some(bound) = cfg.run.expect.max_residual {
        assertions.push(Assertion::at_most("max_residual", res.interior_max, bound));
    }
    let summary = json!({
        "lambda": sol.lambda,
        "mu": sol.mu,
        "x_ref": sol.x_ref,
        "diagnostics": sol.diagnostics,
        "residual": res,
        "exact_error": err,
    });
    let mut out = Outcome::new("solve", summary, assertions);
    out.file("solution.csv", solution_csv(&sol)?);
    Ok(out)
}

/// `E^ν[Lφ]`, when it can be obtained cheaply.
fn e_nu_lphi(cfg: &Config) -> Option<f64> {
    let model = cfg.build_model();
    expected_lphi(&model, &cfg.domain, &mc_settings(cfg), 4097).ok().map(|e| e.mean)
}

pub fn curve(cfg: &Config) -> Result<Outcome> {
    let model = cfg.build_model();
    let driver = cfg.build_driver();
    let c: LambdaCurve<f64> = lambda_of_mu(&model, &cfg.domain, &driver, &cfg.run.mus, &ergodic_settings(cfg))?;
    let mut assertions = Vec::new();
    if let Some(want) = cfg.run.expect.non_increasing {
        assertions.push(Assertion::flag("non_increasing", Some(c.non_increasing()), want));
    }
    let summary = json!({
        "mu": c.mu,
        "lambda": c.lambda,
        "slopes": c.slopes(),
        "continuity_modulus": c.continuity_modulus(),
        "non_increasing": c.non_increasing(),
        "strictly_decreasing": c.strictly_decreasing(),
        "e_nu_lphi": e_nu_lphi(cfg),
    });
    let mut buf = Vec::new();
    c.write_csv(&mut buf)?;
    let mut out = Outcome::new("curve", summary, assertions);
    out.file("curve.csv", buf);
    Ok(out)
}

pub fn invert(cfg: &Config) -> Result<Outcome> {
    let target = cfg
        .run
        .lambda
        .ok_or_else(|| Error::Config("invert needs run.lambda or --lambda".into()))?;
    let model = cfg.build_model();
    let driver = cfg.build_driver();
    let settings = CheckSettings {
        density: cfg.run.density,
        quadrature_resolution: 4097,
        mc: mc_settings(cfg),
    };
    let report = check_all(&model, &driver, &cfg.domain, &settings).ok();
    let mut inv = InversionSettings::new(ergodic_settings(cfg));
    inv.e_nu_lphi = report.as_ref().map(|r| r.e_nu_lphi.mean);
    let s = solve_boundary_cost(&model, &cfg.domain, &driver, target, &inv, report.as_ref().map(|r| &r.flags))?;
    let gap = (s.solution.lambda - target).abs();
    let mut assertions = Vec::new();
    if let Some(bound) = cfg.run.expect.round_trip {
        assertions.push(Assertion::at_most("round_trip", gap, bound));
    }
    let summary = json!({
        "lambda_target": target,
        "mu": s.mu,
        "lambda": s.solution.lambda,
        "round_trip_gap": gap,
        "bracket_slope": s.bracket_slope,
        "evaluations": s.evaluations,
        "claim": s.claim,
    });
    let rows: Vec<Vec<String>> = s
        .bracket_history
        .iter()
        .map(|(m, l)| vec![m.to_string(), l.to_string()])
        .collect();
    let mut out = Outcome::new("invert", summary, assertions);
    out.file("bracket.csv", csv_bytes(&["mu", "lambda"], &rows)?);
    out.file("solution.csv", solution_csv(&s.solution)?);
    Ok(out)
}

pub fn verify(cfg: &Config) -> Result<Outcome> {
    let model = cfg.build_model();
    let driver = cfg.build_driver();
    let settings = ergodic_settings(cfg);
    let mu = cfg.run.mu;
    let sol = solve_ergodic(&model, &cfg.domain, &driver, mu, &settings)?;
    let pde = solution_residual(&sol, &model, &cfg.domain, &driver)?;
    let mc = mc_settings(cfg);
    let field: Arc<dyn ValueGradient<f64>> = match cfg.run.exact {
        Some(e) => exact_field(e, mu),
        None => Arc::new(sol.v.clone()),
    };
    let start = &cfg.run.start;
    let r = bsde_residual(field.as_ref(), sol.lambda, mu, &model, &cfg.domain, &driver, &mc, start)?;
    let lmc = lambda_monte_carlo(field.as_ref(), mu, &model, &cfg.domain, &driver, &mc, start)?;
    let shift = match cfg.run.xi {
        Some(xi) => Some(drift_shift_equivalence(&model, &cfg.domain, &driver, mu, xi, &settings)?),
        None => None,
    };
    let mut assertions = Vec::new();
    lambda_assertion(cfg, sol.lambda, &mut assertions);
    if cfg.run.expect.unbiased == Some(true) {
        assertions.push(Assertion::at_most("bsde_residual_mean", r.mean.mean.abs(), 3.0 * r.mean.std_error));
    }
    if cfg.run.expect.lambda_mc == Some(true) {
        assertions.push(Assertion::at_most(
            "lambda_monte_carlo",
            (lmc.mean - sol.lambda).abs(),
            3.0 * lmc.std_error + cfg.run.tol,
        ));
    }
    let summary = json!({
        "lambda": sol.lambda,
        "mu": mu,
        "pde_residual": pde,
        "bsde_residual": {
            "h": r.h,
            "horizon": r.horizon,
            "mean": r.mean,
            "mean_abs": r.mean_abs,
            "half_horizon": r.half_horizon,
        },
        "lambda_monte_carlo": lmc,
        "drift_shift": shift,
        "field": if cfg.run.exact.is_some() { "exact" } else { "grid" },
    });
    let mut buf = Vec::new();
    r.write_csv(&mut buf)?;
    let mut out = Outcome::new("verify", summary, assertions);
    out.file("bsde_residuals.csv", buf);
    out.file("solution.csv", solution_csv(&sol)?);
    Ok(out)
}

fn policy_row(c: &PolicyCosts<f64>) -> Vec<String> {
    let (jm, js) = c.j.map_or((f64::NAN, f64::NAN), |j| (j.mean, j.std_error));
    [c.i.mean, c.i.std_error, jm, js, c.k_rate.mean, c.k_rate.std_error, c.max_equality_gap]
        .iter()
        .fold(vec![c.policy.clone(), c.horizon.to_string()], |mut v, x| {
            v.push(x.to_string());
            v
        })
}

pub const POLICY_HEADER: [&str; 9] = [
    "policy", "horizon", "i_mean", "i_se", "j_mean", "j_se", "k_rate", "k_rate_se", "max_equality_gap",
];

pub fn control(cfg: &Config) -> Result<Outcome> {
    let cc = cfg
        .control
        .as_ref()
        .ok_or_else(|| Error::Config("control needs a `control` section".into()))?;
    let model = cfg.build_model();
    let problem = &cc.problem;
    let driver = problem.to_driver(&cfg.domain);
    let mu = cfg.run.mu;
    let sol = solve_ergodic(&model, &cfg.domain, &driver, mu, &ergodic_settings(cfg))?;
    let field: Arc<dyn ValueGradient<f64>> = Arc::new(sol.v.clone());
    let mc = mc_settings(cfg);
    let start = &cfg.run.start;
    let mut policies = vec![Policy::optimal()];
    policies.extend(cc.policies.iter().cloned().map(Policy::Spec));
    let costs = policies
        .iter()
        .map(|p| evaluate_policy(&model, &cfg.domain, problem, p, Some(field.clone()), sol.lambda, mu, &mc, start))
        .collect::<Result<Vec<_>>>()?;
    let mut assertions = Vec::new();
    if let Some(m) = cfg.run.expect.optimality {
        assertions.extend(optimality_assertions(&costs, sol.lambda, mu, m.i, m.j));
    }
    let girsanov = policies.get(1).map(|p| {
        let mut short = mc.clone();
        short.horizon = mc.horizon.min(5.0);
        match girsanov_weight_check(&model, &cfg.domain, problem, p, Some(field.clone()), mu, &short, start) {
            Ok(r) => to_value(&r),
            Err(e) => json!({ "error": e.to_string(), "module": e.module(), "remedy": e.remedy() }),
        }
    });
    let summary = json!({
        "lambda": sol.lambda,
        "mu": mu,
        "policies": costs,
        "girsanov": girsanov,
    });
    let rows: Vec<Vec<String>> = costs.iter().map(policy_row).collect();
    let mut out = Outcome::new("control", summary, assertions);
    out.file("policies.csv", csv_bytes(&POLICY_HEADER, &rows)?);
    out.file("solution.csv", solution_csv(&sol)?);
    Ok(out)
}

/// `costs[0]` is the optimal feedback; the rest are scored against the
/// verification inequalities with a combined three-standard-error slack.
pub fn optimality_assertions(costs: &[PolicyCosts<f64>], lambda: f64, mu: f64, i_margin: f64, j_margin: f64) -> Vec<Assertion> {
    let mut out = Vec::new();
    let Some(opt) = costs.first() else {
        return out;
    };
    out.push(Assertion::at_most(
        "optimal_i",
        (opt.i.mean - lambda).abs(),
        3.0 * opt.i.std_error + i_margin,
    ));
    match opt.j {
        Some(j) => out.push(Assertion::at_most("optimal_j", (j.mean - mu).abs(), 3.0 * j.std_error + j_margin)),
        None => out.push(Assertion::missing("optimal_j", "local time indistinguishable from zero")),
    }
    for c in &costs[1..] {
        let se = (c.i.std_error.powi(2) + opt.i.std_error.powi(2)).sqrt();
        out.push(Assertion::at_least(&format!("{}_i", c.policy), c.i.mean, lambda - 3.0 * se));
        match (c.j, opt.j) {
            (Some(j), Some(oj)) => {
                let se = (j.std_error.powi(2) + oj.std_error.powi(2)).sqrt();
                out.push(Assertion::at_least(&format!("{}_j", c.policy), j.mean, mu - 3.0 * se));
            }
            _ => out.push(Assertion::missing(
                &format!("{}_j", c.policy),
                "local time indistinguishable from zero",
            )),
        }
    }
    out
}

