//! Quantum-enhanced variational Monte Carlo laboratory.

pub mod analysis;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod mcmc;
pub mod models;
pub mod rng;
pub mod samples;
pub mod sr;
pub mod vqe;
pub mod wavefunction;

pub use error::{Error, Result};
