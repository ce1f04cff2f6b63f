//! Simulation and verification engine for a one-dimensional stochastic heat
//! equation on the unit interval with Dirichlet boundary conditions and
//! multiplicative space-time white noise.
//!
//! The crate is organized bottom-up: discretization ([`grid`]), exact
//! Dirichlet heat kernel evaluation ([`heat_kernel`]), reproducible noise
//! ([`noise`]), the explicit finite-difference scheme ([`solver`]),
//! first-variation (derivative) fields and their quadratic energy
//! ([`malliavin`]), Monte Carlo statistics ([`estimators`]), and the
//! experiment registry with its I/O contract ([`runner`]).

pub mod estimators;
pub mod grid;
pub mod heat_kernel;
pub mod malliavin;
pub mod noise;
pub mod runner;
pub mod solver;

pub use estimators::{Bandwidth, DecayFit, DensityCurve, EstimateReport, EstimatorError};
pub use grid::{FieldState, FieldTrajectory, Grid, GridError};
pub use heat_kernel::KernelEvaluator;
pub use malliavin::{DerivativeField, IntegratedDerivative, MalliavinEnergy, MalliavinError};
pub use noise::NoiseRealization;
pub use solver::{Coefficients, SolverError};
