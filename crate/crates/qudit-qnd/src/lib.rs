//! Modeling and simulation of ancilla-mediated QND readout of high-spin
//! nuclear qudits.
//!
//! The crate builds the coupled (neutral) and decoupled (ionized) donor
//! Hamiltonians for a spin-I nucleus, derives per-event nuclear spin-flip
//! transition matrices from eigenstate overlaps, compounds them over
//! electron tunneling events, and Monte-Carlo simulates the repeated (RR)
//! and adaptive (AR) readout protocols under an imperfect ancilla
//! detector. A companion NMR module forward-models transition frequencies
//! versus field angle and fits the five-parameter quadrupole tensor to
//! angular spectroscopy data.
//!
//! Units: all energies are frequencies in kHz (h = 1); fields in tesla;
//! gyromagnetic ratios in kHz/T. Basis index 0 corresponds to m = +I.
//! Transition matrices are column-stochastic, entry (final, initial).
//!
//! # Quick start
//!
//! ```
//! use qudit_qnd::*;
//!
//! // per-QND-cycle flip probabilities for the spin-7/2 device defaults
//! let t_cycle = t_qnd(
//!     &PhysicalParams::sb123(),
//!     &QuadrupoleTensor::sb123(),
//!     SpinQuantum::spin_7_2(),
//!     DEFAULT_KAPPA,
//! )
//! .unwrap();
//!
//! // adaptive readout with the measured ancilla model
//! let anc = AncillaModel::sb123();
//! let ar = simulate_ar(&t_cycle, &anc, &ProtocolConfig::ar(2), 10_000, 1).unwrap();
//! let rr = simulate_rr(&t_cycle, &anc, &ProtocolConfig::rr(3), 10_000, 1).unwrap();
//! assert!(ar.fidelity_avg > rr.fidelity_avg);
//! assert_eq!(rr.mean_qnd_cycles, 24.0);
//! ```

pub use nalgebra;

pub mod error;
pub mod io;
pub mod nmr;
pub mod params;
pub mod protocol;
pub mod spin;
pub mod system;
pub mod trace;
pub mod transitions;

mod fit;
mod linalg;

pub use error::{QndError, Result};
pub use nmr::{
    fit_quadrupole, nmr_frequencies, nmr_frequencies_at_angles, splittings, synth_spectra,
    ChargeState, NmrSpectrumSet, QuadrupoleFit,
};
pub use params::{PhysicalParams, QuadrupoleTensor};
pub use protocol::{
    ancilla_sweep, simulate_ar, simulate_rr, AncillaModel, InitPolicy, ProbeOrder, ProtocolConfig,
    ProtocolKind, SimResult, SweepPoint,
};
pub use spin::{make_spin_operators, SpinOperators, SpinQuantum};
pub use system::{
    build_extended_hamiltonian, build_system_hamiltonian, overlap_matrices, ExtendedSystem,
    HermitianSystem, LabeledEigenstate, Manifold, OverlapMatrices,
};
pub use trace::{
    extract_transition_matrix, generate_jump_trace, majority_filter, EmpiricalTransition, JumpTrace,
};
pub use transitions::{
    compound_in_out, extract_generator, fractional_power, t_qnd, transition_couple,
    transition_decouple, GeneratorMatrix, TransitionMatrix, DEFAULT_KAPPA,
};
