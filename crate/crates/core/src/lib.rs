//! Regression Monte Carlo for optimal stopping problems.
//!
//! Exercise policies are learned backwards in time by regressing simulated
//! timing values on states, then evaluated forward on held-out paths.

pub mod bench;
pub mod config;
pub mod designs;
pub mod emulators;
pub mod error;
pub mod model;
pub mod paths;
pub mod policy;
pub mod sampling;
pub mod solvers;
pub mod store;
pub mod swing;

pub use error::{Error, Result};
pub use model::{ModelSpec, StateMatrix};
pub use paths::PathSet;
pub use policy::{forward_eval, EvalResult};
pub use sampling::RandomStream;
pub use solvers::{solve, PolicyFit, SolverConfig};
