//! Finite-volume simulation of `∂ₜu + 𝓛u + ∂_{x_N}(|u|^{q-1}u) = 0` with
//! Dirac-like initial data, plus the diagnostics used to check its
//! qualitative theory: entropy audits, self-similar rescaling and decay
//! rates, comparison and contraction experiments.

pub mod diagnostics;
pub mod entropy;
pub mod error;
pub mod flux;
pub mod grid;
pub mod selfsim;
pub mod snapshot;
pub mod stepper;

pub use error::{Error, Result};
pub use flux::FluxParams;
pub use grid::{Field, Grid};
pub use stepper::{InitialRecipe, OperatorChoice, RunConfig, Trajectory};
