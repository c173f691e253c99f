//! Spectral Galerkin simulation of the stochastic Burgers equation on the
//! torus driven by subordinated cylindrical Brownian motion, together with
//! the Monte Carlo machinery used to check its analytic properties.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod noise_path;
pub mod nonlinearity;
pub mod picard;
pub mod report;
pub mod seed;
pub mod sensitivity;
pub mod spde;
pub mod spectral;
pub mod stats;
pub mod subordinator;
pub mod suites;

pub use error::{Error, Result};
pub use spectral::{NoiseIntensity, SpectralField};
