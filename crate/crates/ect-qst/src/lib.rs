//! Enhanced compressive threshold quantum state tomography (ECT-QST).
//!
//! Given the measured diagonal of an N-qudit density matrix, this crate
//! plans a small set of product measurement settings that still determines
//! every off-diagonal element above a threshold, simulates projective
//! measurements of those settings with shot noise, and reconstructs the
//! density matrix by low-rank maximum likelihood.
//!
//! The pipeline is split into modules mirroring the workflow:
//!
//! * [`generators`] — single-qudit observables (generalized Gell-Mann
//!   matrices) and their eigensystems,
//! * [`target_selection`] — threshold policies turning a measured diagonal
//!   into the list of matrix elements to determine,
//! * [`planner`] — setting construction, overlap matrix, greedy pruning and
//!   weight sorting,
//! * [`states`] — GHZ / W / random-circuit state factories,
//! * [`measurement`] — outcome probabilities, shot-noise sampling and a
//!   synthetic readout-noise model,
//! * [`reconstruction`] — factored maximum-likelihood estimation with
//!   rank escalation, plus fidelity metrics,
//! * [`tqst`] — projector-based tomography recovery and measurement-cost
//!   accounting.
//!
//! With the default `parallel` feature the per-setting inner loops run on
//! rayon; disabling it yields a dependency-free sequential build. Results
//! are identical either way: parallel maps collect in a fixed order before
//! any reduction.

pub mod error;
pub mod generators;
pub mod measurement;
pub mod par;
pub mod planner;
pub mod reconstruction;
mod tensor;
pub mod states;
pub mod target_selection;
pub mod tqst;

pub use error::Error;

/// Convenience result alias used across the crate.
pub type Result<T> = std::result::Result<T, Error>;
