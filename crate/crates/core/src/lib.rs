//! Eigenfunction couplings between a one-dimensional double-well diffusion
//! `dX = -F'(X) dt + sqrt(2 eps) dW` and a two-state Markov chain.
//!
//! Layers, bottom up: [`potential`] (validated double wells), [`measure`]
//! (Gibbs weights on a grid), [`spectral`] (lowest eigenpairs and their
//! diagnostics), [`coupling`] (admissible chain couplings and their
//! classification) and [`simulate`] (Monte Carlo checks).

pub mod coupling;
pub mod measure;
pub mod potential;
pub mod simulate;
pub mod spectral;
pub mod stats;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Potential(#[from] potential::PotentialError),
    #[error(transparent)]
    Measure(#[from] measure::MeasureError),
    #[error(transparent)]
    Spectral(#[from] spectral::SpectralError),
    #[error(transparent)]
    Coupling(#[from] coupling::CouplingError),
    #[error(transparent)]
    Simulate(#[from] simulate::SimulateError),
}

pub type Result<T> = std::result::Result<T, Error>;
