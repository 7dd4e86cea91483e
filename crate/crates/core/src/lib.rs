//! Simulation of reflected stochastic differential equations in bounded
//! domains of `R^d`.
//!
//! The crate couples two processes on one Brownian path:
//!
//! * the Wong-Zakai approximation `X^n`, a reflected random ODE driven by the
//!   lagged dyadic interpolant `W^n` of the Brownian motion ([`solvers::solve_wz`]);
//! * the reflected Itô SDE `X` with the Stratonovich drift correction
//!   `½σσ′`, discretised by projected Euler-Maruyama on the finest level of
//!   the path ([`solvers::solve_reference`]).
//!
//! [`harness`] estimates `E[sup_t |X^n - X|^p]` by Monte Carlo, fits the
//! decay rate in `n`, and evaluates the Lyapunov functional
//! `f_n = exp(r(φ(X) + φ(X^n))) |X^n - X|^2`. [`geometry`] carries the
//! built-in domains together with numerical checks of the admissibility
//! conditions on the domain and its reflection directions.

pub mod brownian;
pub mod coefficients;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod seed;
pub mod solvers;
mod vecmath;

pub use brownian::{BrownianPath, DyadicIndex};
pub use coefficients::{CoefficientSet, Diffusion, Drift};
pub use error::{Error, Result};
pub use geometry::{ConeCoverCertificate, DomainSpec, SkorokhodStepResult};
pub use harness::{ConvergenceStudy, HolderStudy, HolderTarget, RateReport};
pub use solvers::{ReflectedPath, SolverSettings};
