//! Evidential physics-informed neural networks (E-PINN) for inverse problems.
//!
//! An evidential surrogate is first fitted to noisy observations, a Gaussian
//! prior over the unknown equation parameters is derived from how well candidate
//! solutions match that fit, and a second training phase adapts the surrogate to
//! the differential equation with a learnable residual weight. The result is a
//! calibrated predictive distribution plus a grid posterior over the parameters.

pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evidential;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod netcore;
pub mod pde;
pub mod priorbuild;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
