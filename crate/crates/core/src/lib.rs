//! Simulation engine for the two-mode Bose-Hubbard dimer: exact spectra and
//! unitary dynamics, mean-field and perturbative frequency predictions,
//! revival checks, phase-space scans, and quantum-jump simulation of local
//! atom loss.

// `!(x > 0.0)` is used throughout to reject NaN along with bad values
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dissipation;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod meanfield;
pub mod model;
pub mod perturb;
pub mod phasespace;
pub mod revival;
pub mod spectra;

pub use error::{DimerError, Result};
pub use model::{
    build_hamiltonian, coherent_state, coherent_state_n, condensate_fraction, epr,
    imbalance_and_phase, spdm, DimerParams, Moments, Observables, PhaseGrid, PhasePoint, Spdm,
    StateVector, C64,
};

pub use spectra::{diagonalize, BeatSet, EigenDecomposition};
