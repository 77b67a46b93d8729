//! Quantum Fisher information of N qubits coupled to a lossy cavity.
//!
//! The dynamics follow the Tavis–Cummings master equation with cavity loss
//! `κ` and independent qubit emission `γ`, solved in the permutationally
//! symmetric (Dicke) basis. The crate exposes the symmetric-space model, an
//! adaptive integrator, QFI evaluation for the coupling or detuning, a
//! brute-force full-space reference, power-law scaling fits and the sweep
//! harness behind the `cavqfi` command-line tool.

pub mod dicke_space;
pub mod error;
pub mod evolve;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod qfi;
pub mod scaling;

pub use error::{Error, Result};
pub use model::{ProbeState, SystemParams, C64};
