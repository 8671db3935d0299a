//! Quantum trajectories of a qubit repeatedly interacting with a thermal
//! spin chain.
//!
//! The crate covers the discrete repeated-measurement Markov chain built
//! from the exact interaction unitary, the continuous-time limits (heat-bath
//! Lindblad equation, diffusive and jump stochastic master equations), the
//! pure-state unravelings, and numerical checks of generator convergence.
//!
//! Modules, bottom-up:
//!
//! - [`algebra`]: small dense complex matrices, Hermitian eigensolver,
//!   unitary exponential, partial trace, state repair.
//! - [`model`]: physical parameters, interaction unitary and its blocks.
//! - [`discrete`]: branch maps, exact one-step distributions, sampler.
//! - [`continuous`]: Lindblad ODE and stochastic master equation steppers.
//! - [`unraveling`]: stochastic Schrödinger equations, wave-function Monte Carlo.
//! - [`verify`]: discrete and limit generators, residual scans, martingale checks.
//! - [`ensemble`]: seeded parallel ensembles with order-independent reductions.
//! - [`cli`]: JSON-configured experiments behind the `qtraj` binary.

pub mod algebra;
pub mod cli;
pub mod continuous;
pub mod discrete;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod unraveling;
pub mod verify;

pub use algebra::{ComplexMatrix, DensityMatrix, C64};
pub use error::{Error, Result};
