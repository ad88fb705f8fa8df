use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report. Each variant names the module it
/// comes from (see [`Error::module`]) and carries a suggested remedy
/// (see [`Error::remedy`]) so that the CLI can print both.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("point is not on the boundary: |phi(x)| = {phi:e} exceeds tolerance {tol:e}")]
    NotOnBoundary { phi: f64, tol: f64 },
    #[error("Euler step moved {displacement:e}, more than the domain diameter {diameter:e}")]
    StepTooLarge { displacement: f64, diameter: f64 },
    #[error("model has no Kolmogorov potential")]
    NotKolmogorov,
    #[error("potential is not uniformly convex on the sampled grid (smallest Hessian eigenvalue {c:e})")]
    NonConvexPotential { c: f64 },
    #[error("diffusion matrix is not constant")]
    SigmaNotConstant,
    #[error("diffusion matrix is singular near {point:?}")]
    SingularSigma { point: Vec<f64> },
    #[error("Picard iteration did not converge in {sweeps} sweeps (last update {update:e})")]
    PicardDiverged { sweeps: usize, update: f64 },
    #[error("Newton iteration did not converge in {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("vanishing-discount sequence exhausted after {steps} halvings (last change {change:e})")]
    NoConvergence { steps: usize, change: f64 },
    #[error("ergodic schemes disagree: vanishing discount lambda {vanishing:e}, direct lambda {direct:e}")]
    SchemeMismatch { vanishing: f64, direct: f64 },
    #[error("lambda(mu) is flat (slope {slope:e}); mu is not identifiable")]
    FlatCurve { slope: f64 },
    #[error("lambda(mu) does not straddle the target {target:e} on [{lo:e}, {hi:e}]")]
    BracketFailure { target: f64, lo: f64, hi: f64 },
    #[error("expected local time {estimate:e} is within 3 standard errors ({std_error:e}) of zero")]
    DegenerateLocalTime { estimate: f64, std_error: f64 },
    #[error("importance weights degenerate: effective sample size {ess:.1} of {paths} paths")]
    WeightDegeneracy { ess: f64, paths: usize },
    #[error("singular linear system")]
    SingularMatrix,
    #[error("unsupported dimension {dim} for {what}")]
    UnsupportedDimension { dim: usize, what: &'static str },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Module that raised the error.
    pub fn module(&self) -> &'static str {
        use Error::*;
        match self {
            NonConvergence { .. } | NotOnBoundary { .. } => "geometry",
            StepTooLarge { .. } | NotKolmogorov => "dynamics",
            NonConvexPotential { .. } | SigmaNotConstant => "hypotheses",
            SingularSigma { .. } => "verification",
            PicardDiverged { .. } | NewtonDiverged { .. } | SingularMatrix => "discounted_solver",
            NoConvergence { .. } | SchemeMismatch { .. } | FlatCurve { .. } | BracketFailure { .. } => {
                "ergodic_solver"
            }
            DegenerateLocalTime { .. } | WeightDegeneracy { .. } => "control",
            UnsupportedDimension { .. } | InvalidArgument(_) => "core",
            Config(_) | Io(_) => "config",
        }
    }

    /// Short suggestion for the user.
    pub fn remedy(&self) -> &'static str {
        use Error::*;
        match self {
            NonConvergence { .. } => "check that phi is smooth and well conditioned near the point",
            NotOnBoundary { .. } => "project the point onto the boundary first",
            StepTooLarge { .. } => "reduce the time step h",
            NotKolmogorov => "use a model with b = -grad U and sigma = sqrt(2) I",
            NonConvexPotential { .. } => "use a uniformly convex potential or a grid avoiding flat points",
            SigmaNotConstant => "theta is only defined for constant sigma",
            SingularSigma { .. } => "the drift shift needs an invertible sigma on the closed domain",
            PicardDiverged { .. } => "increase alpha, refine the grid, or use the Newton scheme",
            NewtonDiverged { .. } => "refine the grid or fall back to the vanishing-discount scheme",
            NoConvergence { .. } => "loosen tol or allow more alpha halvings",
            SchemeMismatch { .. } => "refine the grid (discretization too coarse)",
            FlatCurve { .. } => "the boundary cost does not influence lambda; mu cannot be recovered",
            BracketFailure { .. } => "the target lambda is outside the range of lambda(mu)",
            DegenerateLocalTime { .. } => "increase the horizon or check that the boundary is visited",
            WeightDegeneracy { .. } => "shorten the horizon or use the drift-shift estimator",
            SingularMatrix => "check the discretization (disconnected grid?)",
            UnsupportedDimension { .. } => "grid solvers support dimensions 1 and 2",
            InvalidArgument(_) => "check the call arguments",
            Config(_) => "fix the configuration file",
            Io(_) => "check paths and permissions",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
