//! Solve outcome containers shared by every optimizer.

use serde::Serialize;

use crate::grid::VectorField;
use crate::models::{Counters, ObjectiveValue};

/// How a solve ended. `IterCap` marks runs that spent the full iteration
/// budget without meeting the gradient tolerance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Status {
    Converged,
    IterCap,
    Stagnated,
}

impl Status {
    pub fn label(self) -> &'static str {
        match self {
            Status::Converged => "Converged",
            Status::IterCap => "IterCap",
            Status::Stagnated => "Stagnated",
        }
    }
}

/// One accepted outer iterate.
#[derive(Clone, Copy, Debug)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

/// Everything a solver hands back: the final control, work counters, and the
/// convergence history.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub v: VectorField,
    pub status: Status,
    /// Completed outer iterations (accepted updates).
    pub iterations: usize,
    pub counters: Counters,
    pub objective: ObjectiveValue,
    /// Max-norm of the gradient at the final iterate.
    pub grad_norm: f64,
    /// Max-norm of the gradient at the initial iterate.
    pub grad_norm0: f64,
    /// Mismatch norm relative to the initial mismatch,
    /// `||m(1) - m1|| / ||m0 - m1||`.
    pub dist: f64,
    /// Wall-clock seconds for the whole solve.
    pub wall_time: f64,
    pub trace: Vec<IterRecord>,
}

impl SolveReport {
    /// Gradient max-norm reduction; 0 when the initial gradient vanished.
    pub fn rel_grad(&self) -> f64 {
        if self.grad_norm0 == 0.0 {
            0.0
        } else {
            self.grad_norm / self.grad_norm0
        }
    }
}
