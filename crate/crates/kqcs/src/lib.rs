//! Joint (k,q)-space compressed-sensing reconstruction for diffusion MRI.
//!
//! The library reconstructs diffusion signal volumes from jointly
//! undersampled spatial-frequency (k) and angular (q) measurements. A
//! signal volume S (V voxels x G directions) is modeled through an
//! overcomplete angular dictionary Gamma as S = A Gamma^T, and the
//! coefficient matrix A is recovered from measurements by a smoothed
//! FISTA solver under one of two sparsity models:
//!
//! - SAAS: analysis in space, synthesis in angle, with one joint penalty
//!   lambda * ||Psi^T A||_1;
//! - Prior: separate penalties lambda1 * ||A||_1 + lambda2 * ||Psi^T A Gamma^T||_1.
//!
//! Supporting modules provide the centered unitary FFT, Haar and
//! finite-difference spatial transforms, (k,q) mask generation with the
//! sensing operator, a crossing-fiber phantom, and an experiment sweep
//! harness behind the `kqcs` CLI.

pub mod angular;
pub mod error;
pub mod eval;
pub mod fourier;
pub mod io;
pub mod linop;
pub mod phantom;
pub mod sampling;
pub mod solver;
pub mod spatial;
pub mod types;

#[cfg(test)]
pub(crate) mod test_oracles;

pub use error::{Error, Result};
