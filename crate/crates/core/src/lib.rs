//! Ergodic BSDEs with Neumann boundary conditions: reflected diffusions,
//! discounted and ergodic semi-linear Neumann solvers, verification by
//! residuals and simulation, and ergodic control.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod control;
pub mod discounted;
pub mod driver;
pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod hypotheses;
pub mod linalg;
pub mod scalar;
mod scheme;
pub mod stats;
pub mod verification;

pub use discounted::{solve_discounted, NonlinearMethod, SolverSettings};
pub use driver::{BoundaryCost, DriverSpec};
pub use dynamics::{McSettings, Potential, ReflectedPath, ReflectionScheme, SdeModel, StationaryStart};
pub use ergodic::{lambda_of_mu, solve_boundary_cost, solve_ergodic, ErgodicScheme, ErgodicSettings, ErgodicSolution};
pub use error::{Error, Result};
pub use geometry::DomainSpec;
pub use grid::{Grid, GridFunction, GridSpec};
pub use hypotheses::{check_all, CheckSettings, HypothesisReport};
pub use scalar::Real;
pub use stats::Estimate;

pub type Domain64 = DomainSpec<f64>;
pub type Model64 = SdeModel<f64>;
pub type Driver64 = DriverSpec<f64>;
pub type Domain32 = DomainSpec<f32>;
pub type Model32 = SdeModel<f32>;
pub type Driver32 = DriverSpec<f32>;
