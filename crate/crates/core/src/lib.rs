//! Synthesis and simulation of observer-based output-feedback controllers
//! with event-triggering mechanisms, for nonlinear plants whose
//! nonlinearities satisfy incremental quadratic constraints.
//!
//! The crate is organized bottom-up:
//!
//! * [`mat`] — dense real-matrix kernel (Jacobi eigendecomposition,
//!   pseudoinverse, definiteness tests, Schur reductions).
//! * [`rng`] — the documented linear-congruential generator used everywhere
//!   randomness is needed, so every result is reproducible bit-for-bit.
//! * [`iqc`] — incremental multiplier matrices for Lipschitz, sector-bounded
//!   and positive-real nonlinearities, their T-factorizations, and a sampled
//!   validator for the incremental quadratic constraint.
//! * [`lmi`] — affine symmetric-matrix constraint problems in named decision
//!   variables, an internal feasibility solver, and SDPA sparse-format export.
//! * [`synthesis`] — the full gain-synthesis pipelines (block-diagonal and
//!   anti-triangular multiplier parameterizations), closed-form gain
//!   extraction, and composite Lyapunov certificates.
//! * [`etm`] — event-trigger parameter design with built-in Zeno-excluding
//!   dwell times, for the controller-channel and the dual asynchronous
//!   configurations.
//! * [`sim`] — fixed-step closed-loop simulation of the three configurations
//!   with bounded disturbance injection and event logging.
//! * [`analysis`] — inter-execution statistics, Lyapunov-decrease
//!   verification, trigger-invariant audits, ultimate-bound estimates.
//!
//! The crate is `no_std` + `alloc`; all floating-point transcendentals go
//! through `libm` so results do not depend on the host math library.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod analysis;
pub mod etm;
pub mod iqc;
pub mod lmi;
pub mod mat;
pub mod presets;
pub mod rng;
pub mod sim;
pub mod synthesis;

pub use iqc::{FactorBlocks, MultiplierFactorization, Nonlinearity, PlantModel};
pub use mat::{Mat, MatError, SymEig};
pub use synthesis::{GainSet, StabilityCertificate};

/// Default numeric tolerance used wherever an operation takes an optional
/// tolerance and none is supplied.
pub const DEFAULT_TOL: f64 = 1e-9;
