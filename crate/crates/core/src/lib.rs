//! Learning the joint distribution of two symbol sequences from unpaired
//! samples of their marginals.
//!
//! The crate is organised around tabular models where every quantity of
//! interest has an exact answer:
//!
//! - [`corpus`]: text normalisation, symbol tables, n-gram statistics and
//!   the x-only / y-only / paired corpus split.
//! - [`cipher`]: substitution ciphers and the softmax-parameterised
//!   row-stochastic decoder matrix.
//! - [`svd_solver`]: analytic recovery of a permutation decoder from bigram
//!   statistics.
//! - [`grad_solver`]: gradient-based decipherment by bigram distribution
//!   matching.
//! - [`binary_lab`]: closed-form identifiability analysis for binary
//!   alphabets.
//! - [`tabular`]: the semi-supervised noisy-channel trainer with a
//!   variational posterior trained by the KL encoder loss.

pub mod binary_lab;
pub mod cipher;
pub mod corpus;
pub mod error;
pub mod grad_solver;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod svd_solver;
pub mod tabular;

pub use cipher::{Permutation, StochasticMatrix};
pub use corpus::{DataSplit, NGramStats, SymbolTable};
pub use error::{Error, Result};
pub use grad_solver::{RunReport, SolverConfig};
pub use tabular::{TabularJointModel, TabularPosterior, TrainConfig};
