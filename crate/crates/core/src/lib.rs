//! Random feature approximation of operator-valued kernels with spectral
//! regularization, shallow neural operators in the tangent kernel regime, and
//! Monte Carlo checks of the accompanying concentration bounds.

pub mod activation;
pub mod conclab;
pub mod dataio;
pub mod error;
pub mod estimator;
pub mod features;
pub mod linalg;
pub mod neuralop;
pub mod registry;
pub mod rng;
pub mod spectral;
pub mod synthetic;

pub use error::{Error, Result};
