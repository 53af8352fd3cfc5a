//! Vortex-particle approximation of the stochastic Navier–Stokes-α vorticity
//! equation with transport noise on the 3-torus, together with a reference
//! pseudo-spectral solver and a Lagrangian flow-map verifier.

pub mod error;
pub mod flowmap;
pub mod harness;
pub mod kernel;
pub mod mollifier;
pub mod noise;
pub mod particles;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use harness::{ErrorTable, ExperimentConfig};
pub use kernel::AlphaKernel;
pub use mollifier::{MollifierSpec, MollifierSpectrum};
pub use noise::{BrownianDriver, NoiseModel, SigmaField, StreamId};
pub use particles::{Drivers, ParticleDynamics, ParticleEnsemble};
pub use solver::{SolverConfig, SolverState, SpectralSolver};
pub use spectral::{GridSpec, PhysicalField, SpectralField, TensorField};
