//! Pseudo-spectral toolkit for transport-based optimization on the periodic
//! square `[0, 2*pi)^2`.
//!
//! The library solves inverse problems of the form: find a stationary velocity
//! field `v` such that a scalar image or density transported by `v` over unit
//! time matches a given target, balanced against a Sobolev smoothness penalty
//! on `v`. Three transport models are supported (plain advection, mass
//! preserving continuity transport, and advection with a divergence-free
//! velocity), and three families of optimizers operate on the shared reduced
//! gradient: preconditioned gradient descent, windowed nonlinear acceleration
//! of that descent (NGMRES and Anderson mixing, optionally alternated with
//! plain descent steps), and an inexact Gauss-Newton-Krylov method with a
//! choice of spectral preconditioners.
//!
//! Spatial discretization is Fourier collocation on a uniform grid; transport
//! equations are integrated with a semi-Lagrangian scheme (second order
//! Runge-Kutta characteristic tracing plus periodic cubic B-spline
//! interpolation). All state lives in explicit structs; there is no global
//! mutable solver state, so independent solves can run on worker threads.

pub mod accel;
pub mod check;
pub mod data;
pub mod error;
mod fft;
pub mod fixedpoint;
pub mod grid;
pub mod harness;
pub mod interp;
pub mod io;
pub mod krylov;
pub mod models;
pub mod newton;
pub mod report;
pub mod transport;

pub use error::Error;
pub use grid::{GridSpec, ScalarField, VectorField};
pub use models::{Counters, ModelKind, ObjectiveValue, ProblemSpec};
pub use report::{SolveReport, Status};
