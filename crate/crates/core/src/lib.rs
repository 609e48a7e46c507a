//! Simulation and parameter-estimation engine for zero-field hyperfine
//! spectroscopy of an electron-nuclear spin ensemble coupled to a tunable
//! high-Q microwave cavity.
//!
//! The crate splits into five parts:
//!
//! * [`spin`] — construction and diagonalization of the electron-nuclear
//!   spin Hamiltonian, transition enumeration, field scans and curvatures;
//! * [`thermal`] — Boltzmann populations and the coupling/photon budget
//!   (ion counts, vacuum field, collective coupling, photon number, Rabi
//!   frequency);
//! * [`cavity`] — input-output transmission with ensemble absorption,
//!   peak/Q extraction, dispersive pulling, vibration averaging, saturation
//!   and gap tuning;
//! * [`lineshape`] — Monte-Carlo synthesis of inhomogeneous line profiles
//!   from random local fields;
//! * [`fit`] — weighted least-squares refinement of hyperfine/quadrupole
//!   parameters against observed line centres.
//!
//! All numerics are generic over the scalar type through [`real::Real`]
//! (`f32` or `f64`); the `*64` aliases below cover the common case.

pub mod cavity;
pub mod constants;
pub mod error;
pub mod fit;
pub mod lineshape;
pub mod presets;
pub mod real;
pub mod spin;
pub mod thermal;

pub use error::{Error, Result};
pub use real::Real;

/// f64 instantiations of the core types.
pub type SpinSystem64 = spin::SpinSystem<f64>;
pub type FieldVector64 = spin::FieldVector<f64>;
pub type EnergyLevels64 = spin::EnergyLevels<f64>;
pub type Transition64 = spin::Transition<f64>;
pub type EnsembleSpec64 = thermal::EnsembleSpec<f64>;
pub type CavityMode64 = thermal::CavityMode<f64>;
pub type EnsembleLine64 = cavity::EnsembleLine<f64>;
pub type SweepResult64 = cavity::SweepResult<f64>;
pub type PeakSummary64 = cavity::PeakSummary<f64>;
pub type TuningCalibration64 = cavity::TuningCalibration<f64>;
pub type LineProfile64 = lineshape::LineProfile<f64>;
pub type FieldDistribution64 = lineshape::FieldDistribution<f64>;
pub type ToyCrossing64 = lineshape::ToyCrossing<f64>;
pub type ObservedLine64 = fit::ObservedLine<f64>;
pub type FitProblem64 = fit::FitProblem<f64>;
pub type FitResult64 = fit::FitResult<f64>;
