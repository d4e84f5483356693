//! Driven jump processes and diffusions near equilibrium: exact stationary
//! solutions, expansions of the stationary density in the driving strength,
//! Monte Carlo path estimators and nonlinear response.

pub mod cli;
pub mod diffusion;
pub mod error;
pub mod exact;
pub mod expansion;
pub mod finite_diff;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod response;
pub mod rng;
pub mod sampler;
pub mod sum;

pub use error::{Error, Result};
pub use model::JumpModel;
