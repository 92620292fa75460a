//! Gaussian-process marketing-mix models and the tools to study when a static
//! nonlinear response and a time-varying linear response are confused with
//! one another.
//!
//! The crate covers kernels and exact GP inference, media transforms
//! (Hill, AdStock, Koyck), synthetic data generation, the two focal MMMs plus
//! a parametric Hill model, holdout evaluation and the factorial conflation
//! simulation, budget optimization, adaptive separation tests, and executable
//! checks of the OLS/Taylor identities.

pub mod budget;
pub mod dataset;
pub mod dgp;
pub mod error;
pub mod evaluation;
pub mod gp;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod models;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod separation;
pub mod stats;
pub mod theory;
pub mod transforms;

pub use error::{Error, Result};
