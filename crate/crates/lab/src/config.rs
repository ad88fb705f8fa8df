//! Experiment configuration: one JSON document with sections
//! `domain`, `model`, `driver`, `control` and `run`.

use std::collections::BTreeMap;
use std::path::Path;

use ebsde_core::control::{ControlProblem, PolicySpec};
use ebsde_core::{
    BoundaryCost, DomainSpec, DriverSpec, ErgodicScheme, Error, Potential, SdeModel, StationaryStart,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub domain: DomainSpec<f64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub driver: DriverConfig,
    #[serde(default)]
    pub control: Option<ControlConfig>,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `b = -∇U`, `σ = √2 I`.
    Kolmogorov {
        potential: PotentialSpec,
        #[serde(default = "one")]
        dim: usize,
    },
    /// `b = -κx`, `σ = s I`.
    OrnsteinUhlenbeck {
        kappa: f64,
        s: f64,
        #[serde(default = "one")]
        dim: usize,
    },
    /// `b = -x`, `σ = diag(x)`.
    Degenerate {
        #[serde(default = "one")]
        dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    /// `U = k|x|²/2`.
    Quadratic { k: f64 },
    /// `U = |x|⁴`.
    Quartic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverKind {
    #[default]
    Zero,
    Constant {
        kappa: f64,
    },
    /// `ψ = c + a cos|x| + k sin z₁`.
    Composite {
        #[serde(default)]
        c: f64,
        a: f64,
        #[serde(default)]
        k: f64,
    },
    Cosine {
        a: f64,
    },
    /// Hamiltonian of the `control` section (its boundary cost is used).
    Hamiltonian,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DriverConfig {
    #[serde(flatten)]
    pub kind: DriverKind,
    #[serde(default)]
    pub boundary: BoundaryCost<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    #[serde(flatten)]
    pub problem: ControlProblem<f64>,
    /// Policies scored next to the optimal feedback.
    #[serde(default)]
    pub policies: Vec<PolicySpec<f64>>,
}

/// Closed-form value functions usable as oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactSolution {
    /// `v = -(μ/3)|x|³` for the degenerate model with zero data.
    Cubic,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    /// `|λ - value| ≤ tol` (`solve`, `verify`).
    #[serde(default)]
    pub lambda: Option<Target>,
    /// Distance of the normalized solution to `exact` (`solve`).
    #[serde(default)]
    pub exact_error: Option<f64>,
    /// Upper bound on the interior PDE residual (`solve`).
    #[serde(default)]
    pub max_residual: Option<f64>,
    /// Required hypothesis flags (`check`), keyed by field name.
    #[serde(default)]
    pub flags: BTreeMap<String, bool>,
    /// λ(μ) non-increasing (`curve`).
    #[serde(default)]
    pub non_increasing: Option<bool>,
    /// `|λ(μ*) - target|` bound (`invert`).
    #[serde(default)]
    pub round_trip: Option<f64>,
    /// BSDE residual mean within 3 standard errors of zero (`verify`).
    #[serde(default)]
    pub unbiased: Option<bool>,
    /// λ_MC within 3 standard errors plus `tol` of λ (`verify`). Only
    /// meaningful from a stationary start.
    #[serde(default)]
    pub lambda_mc: Option<bool>,
    /// Verification inequalities for the scored policies (`control`).
    #[serde(default)]
    pub optimality: Option<Margins>,
}

/// Slack added to three standard errors when comparing the optimal
/// feedback's costs with `(λ, μ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub i: f64,
    pub j: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub value: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Grid points per axis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub scheme: ErgodicScheme,
    #[serde(default)]
    pub mu: f64,
    #[serde(default = "default_mus")]
    pub mus: Vec<f64>,
    /// Target λ for `invert`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default = "default_start")]
    pub start: StationaryStart<f64>,
    /// Drift shift compared by `verify`.
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub exact: Option<ExactSolution>,
    #[serde(default = "default_density")]
    pub density: usize,
    #[serde(default)]
    pub expect: Expectations,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

fn one() -> usize {
    1
}
fn default_seed() -> u64 {
    7
}
fn default_tol() -> f64 {
    1e-4
}
fn default_grid() -> usize {
    401
}
fn default_mus() -> Vec<f64> {
    vec![-2.0, -1.0, 0.0, 1.0, 2.0]
}
fn default_paths() -> usize {
    64
}
fn default_horizon() -> f64 {
    10.0
}
fn default_h() -> f64 {
    1e-3
}
fn default_start() -> StationaryStart<f64> {
    StationaryStart::Auto
}
fn default_density() -> usize {
    33
}

/// Command-line overrides applied on top of `run`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, Error> {
        let c: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        let r = &mut self.run;
        if let Some(v) = o.seed {
            r.seed = v;
        }
        if let Some(v) = o.tol {
            r.tol = v;
        }
        if let Some(v) = o.grid {
            r.grid = v;
        }
        if let Some(v) = o.paths {
            r.paths = v;
        }
        if let Some(v) = o.horizon {
            r.horizon = v;
        }
        if let Some(v) = o.mu {
            r.mu = v;
        }
        if let Some(v) = o.lambda {
            r.lambda = Some(v);
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.domain.validate()?;
        let d = self.domain.dim();
        let md = match self.model {
            ModelSpec::Kolmogorov { dim, .. } | ModelSpec::OrnsteinUhlenbeck { dim, .. } | ModelSpec::Degenerate { dim } => dim,
        };
        if md != d {
            return Err(Error::Config(format!("model dimension {md} differs from domain dimension {d}")));
        }
        if let Some(c) = &self.control {
            c.problem.validate()?;
            if c.problem.dim() != d {
                return Err(Error::Config(format!(
                    "control dimension {} differs from domain dimension {d}",
                    c.problem.dim()
                )));
            }
        }
        if self.driver.kind == DriverKind::Hamiltonian && self.control.is_none() {
            return Err(Error::Config("driver kind `hamiltonian` needs a `control` section".into()));
        }
        let r = &self.run;
        if !(r.tol > 0.0 && r.h > 0.0 && r.horizon > 0.0) || r.grid < 3 || r.paths == 0 {
            return Err(Error::Config(
                "run needs tol, h, horizon > 0, grid ≥ 3 and paths ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn build_model(&self) -> SdeModel<f64> {
        match &self.model {
            ModelSpec::Kolmogorov { potential, dim } => {
                let p = match potential {
                    PotentialSpec::Quadratic { k } => Potential::quadratic(*k),
                    PotentialSpec::Quartic => Potential::quartic(),
                };
                SdeModel::kolmogorov(p, *dim)
            }
            ModelSpec::OrnsteinUhlenbeck { kappa, s, dim } => SdeModel::ornstein_uhlenbeck(*kappa, *s, *dim),
            ModelSpec::Degenerate { dim } => SdeModel::degenerate_diagonal(*dim),
        }
    }

    pub fn build_driver(&self) -> DriverSpec<f64> {
        let base = match &self.driver.kind {
            DriverKind::Zero => DriverSpec::zero(),
            DriverKind::Constant { kappa } => DriverSpec::constant(*kappa),
            DriverKind::Composite { c, a, k } => DriverSpec::composite(*c, *a, *k),
            DriverKind::Cosine { a } => DriverSpec::cosine(*a),
            DriverKind::Hamiltonian => {
                let c = self.control.as_ref().expect("validated");
                return c.problem.to_driver(&self.domain);
            }
        };
        match &self.driver.boundary {
            BoundaryCost::Zero => base,
            g => base.with_boundary(g.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEGENERATE: &str = r#"{
        "domain": {"kind": "ball", "radius": 1.0},
        "model": {"kind": "degenerate"},
        "run": {"mu": 1.0, "grid": 2001}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = Config::from_json(DEGENERATE).unwrap();
        assert_eq!(c.run.grid, 2001);
        assert_eq!(c.run.seed, 7);
        assert_eq!(c.driver.kind, DriverKind::Zero);
        assert!(c.control.is_none());
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let bad = DEGENERATE.replace("\"grid\"", "\"gird\"");
        let e = Config::from_json(&bad).unwrap_err();
        assert_eq!(e.module(), "config");
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let bad = DEGENERATE.replace(r#""kind": "degenerate""#, r#""kind": "degenerate", "dim": 2"#);
        assert!(matches!(Config::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn hamiltonian_needs_control() {
        let bad = DEGENERATE.replace(r#""run""#, r#""driver": {"kind": "hamiltonian"}, "run""#);
        assert!(matches!(Config::from_json(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_replace_run_values() {
        let mut c = Config::from_json(DEGENERATE).unwrap();
        c.apply(&Overrides {
            seed: Some(3),
            grid: Some(11),
            lambda: Some(0.5),
            ..Default::default()
        });
        assert_eq!((c.run.seed, c.run.grid, c.run.lambda), (3, 11, Some(0.5)));
    }

    #[test]
    fn control_section_round_trips() {
        let text = r#"{
            "domain": {"kind": "ball", "radius": 1.0},
            "model": {"kind": "kolmogorov", "potential": {"kind": "quadratic", "k": 1.0}},
            "driver": {"kind": "hamiltonian"},
            "control": {
                "controls": [
                    {"r": [0.25], "cost": {"constant": 0.2, "linear": [0.3]}},
                    {"r": [-0.25], "cost": {"constant": 0.2, "linear": [-0.3]}}
                ],
                "boundary": {"kind": "linear", "c": 0.0, "a": [0.5]},
                "policies": [{"kind": "constant", "control": 0}]
            }
        }"#;
        let c = Config::from_json(text).unwrap();
        let back = Config::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
        let d = c.build_driver();
        assert!((d.g(&[1.0]) - 0.5).abs() < 1e-15);
    }
}
