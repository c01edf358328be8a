//! Numerical library for partially observed stochastic optimal control via
//! control randomization.
//!
//! The pipeline replaces the feedback control by an exogenous pure-jump mark
//! process driven by a Poisson random measure, simulates the randomized pair
//! `(X, I)` under the reference law, particle-approximates the conditional law
//! of the state given the observation-and-jump filtration, and computes the
//! value by backward least-squares regression schemes (a constrained scheme
//! with a sup step over marks, and a penalized scheme). Dual intensity-control
//! bounds and classical oracles (plain Monte Carlo, a 1-D dynamic-programming
//! lattice, Kalman/Riccati) cross-validate the value.

pub mod bsde;
pub mod check;
pub mod dual;
pub mod error;
pub mod filter;
pub mod forward;
pub mod model;
pub mod oracles;
pub mod pathdump;
pub mod problems;
pub mod randomizer;
pub mod rng;
pub mod stats;

pub use bsde::{
    solve_constrained, solve_penalized, BsdeSolution, RegressionModel, ScenarioBatch, SolveMode,
};
pub use error::{Error, Result};
pub use filter::{FilterCloud, FilterFeatures};
pub use forward::MarkedPath;
pub use model::{ControlGrid, ProblemSpec, TimeGrid};
pub use randomizer::{IntensityControl, JumpRecord};
pub use rng::CounterRng;
