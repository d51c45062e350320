//! Numerical laboratory for scaling limits of semi-relativistic particles
//! coupled to a scalar Bose field.
//!
//! The crate builds every operator of the model on a finite discretization —
//! a periodic particle lattice tensored with a truncated boson Fock space —
//! and measures the algebraic identities, operator bounds, and resolvent /
//! time-evolution convergence that drive the Λ → ∞ scaling limit, where the
//! coupled dynamics collapses onto the semi-relativistic Schrödinger operator
//! with an effective potential on the vacuum sector.
//!
//! Module map:
//! - [`modes`]: boson momentum quadrature grid, dispersion, coupling family.
//! - [`fock`]: truncated Fock basis and second-quantized operators.
//! - [`particle`]: periodic lattice and the spectral kinetic operator
//!   √(−Δ + M²) applied via FFT.
//! - [`assembly`]: coupled-space operators H(Λ), U(Λ), K(Λ), V_eff.
//! - [`analysis`]: resolvent solves, time evolution, Λ-sweeps, and the
//!   consolidated property-check suite.

pub mod analysis;
pub mod assembly;
pub mod error;
pub mod fock;
pub mod linalg;
pub mod modes;
pub mod particle;

pub use analysis::{
    evolve_dense, run_property_suite, sweep_lambda, EvolutionRecord, PropertySuite, SolverOptions,
    SweepRecord, TestVectorSet,
};
pub use assembly::{CoupledOperator, EffectivePotential, Model, ModelConfig, SizeCaps};
pub use error::{Error, Result};
pub use fock::{FockBasis, FockOperator, FockVector};
pub use modes::{
    build_mode_grid, inner_w, validate_assumptions, CouplingFamily, Dispersion, ModeGrid,
    ValidationReport, WeightedVector,
};
pub use particle::{build_particle_grid, KineticOperator, ParticleGrid};
