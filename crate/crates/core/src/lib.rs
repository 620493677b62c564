//! Maximum-likelihood maximum-entropy (MLME) quantum state reconstruction.
//!
//! For informationally incomplete measurements the likelihood has a plateau
//! of equally likely states; MLME picks the one with the largest von Neumann
//! entropy by maximizing `lambda S(rho) + (1/N) log L(rho)` for small
//! `lambda`.
//!
//! - [`linalg`]: Hermitian operators, density matrices, spectral functions.
//! - [`pom`]: measurements (trine, Pauli, homodyne), Gram analysis, operator bases.
//! - [`functionals`]: likelihood, entropies, the `R`/`T` operators, parity and `W00`.
//! - [`reconstruct`]: the MLME/ML iteration and the standard max-entropy solver.
//! - [`simulate`]: random states, multinomial sampling, and the sweep protocols.
//! - [`cli`]: the `mlme` command-line tool.

// `!(x >= 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod functionals;
pub mod linalg;
pub mod pom;
mod quadrature;
pub mod reconstruct;
pub mod simulate;
pub mod tolerance;

pub use error::{Error, Result};
pub use functionals::{CountData, Probabilities};
pub use linalg::{DensityMatrix, HermitianOperator, Spectrum};
pub use pom::{GramAnalysis, OperatorBasis, Pom, QuadratureSetting, StateDecomposition};
pub use reconstruct::{IterationConfig, ReconstructionResult};

#[doc(hidden)]
pub use quadrature::integrate as adaptive_integrate;
