//! The fixed-point map `q`: one regularization-preconditioned gradient
//! descent step with a memoried Armijo backtracking line search. Plain
//! iteration of `q` is the baseline solver; the accelerators in
//! [`crate::accel`] treat `q` as a black-box map and mix its iterates.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::{apply_inverse_regularization, inner_vec, leray_project, VectorField};
use crate::models::{
    evaluate_gradient, evaluate_objective, Counters, ModelKind, ObjectiveValue, ProblemSpec,
};
use crate::report::{IterRecord, SolveReport, Status};

/// Marker for a failed line search: no step length satisfied the descent
/// condition within the halving budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stagnation;

/// Backtracking state carried across iterations: the accepted step length is
/// remembered and retried first on the next call.
#[derive(Clone, Copy, Debug)]
pub struct LineSearchState {
    /// Step length to try first.
    pub rho: f64,
    /// Sufficient-decrease constant.
    pub c: f64,
}

impl Default for LineSearchState {
    fn default() -> Self {
        Self { rho: 1.0, c: 1e-4 }
    }
}

/// Outer-loop stopping parameters: relative max-norm gradient tolerance and
/// the iteration budget.
#[derive(Clone, Copy, Debug)]
pub struct StopCriteria {
    pub eps_rel: f64,
    pub n_iter: usize,
}

impl StopCriteria {
    pub fn new(eps_rel: f64, n_iter: usize) -> Result<Self> {
        if !(eps_rel > 0.0 && eps_rel.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gradient tolerance must be positive, got {eps_rel}"
            )));
        }
        if n_iter == 0 {
            return Err(Error::InvalidParameter(
                "iteration budget must be at least 1".into(),
            ));
        }
        Ok(Self { eps_rel, n_iter })
    }
}

/// Maximum number of halvings before the search gives up. Nothing
/// principled about the value: it is a floor against infinite loops.
const MAX_HALVINGS: usize = 50;

/// Generic Armijo backtracking: starts at the stored step, halves until
/// `f(rho) < f0 + c*rho*slope`, and updates the stored step (doubled after a
/// first-try acceptance, otherwise set to the accepted value).
///
/// Returns the accepted `(rho, f(rho))`.
pub fn backtrack(
    ls: &mut LineSearchState,
    f0: f64,
    slope: f64,
    mut trial: impl FnMut(f64) -> f64,
) -> std::result::Result<(f64, f64), Stagnation> {
    debug_assert!(slope < 0.0, "line search needs a descent direction");
    let mut rho = ls.rho;
    for halving in 0..=MAX_HALVINGS {
        let f = trial(rho);
        if f < f0 + ls.c * rho * slope {
            ls.rho = if halving == 0 { 2.0 * rho } else { rho };
            return Ok((rho, f));
        }
        rho *= 0.5;
    }
    Err(Stagnation)
}

/// Preconditioned steepest-descent direction `-(alpha L)^{-1} g`, confined
/// to the divergence-free subspace for the incompressible model.
pub fn search_direction(g: &VectorField, alpha: f64, model: ModelKind) -> VectorField {
    let mut s = apply_inverse_regularization(g, alpha, model.reg_order())
        .expect("penalty order is fixed by the model");
    s.scale(-1.0);
    if model == ModelKind::Incompressible {
        s = leray_project(&s);
    }
    s
}

/// Pointwise fixed-point residual `v - q(v)`.
pub fn residual(v: &VectorField, qv: &VectorField) -> VectorField {
    VectorField::sub(v, qv)
}

/// One accepted step of the fixed-point map.
pub struct QStep {
    pub v_next: VectorField,
    pub objective: ObjectiveValue,
    pub rho: f64,
}

/// Core of the fixed-point map, for callers that already hold the gradient
/// and objective at `v`: build the preconditioned direction, line search,
/// return the accepted point. `g = 0` is already a fixed point and is
/// returned unchanged without any search.
pub fn q_step(
    spec: &ProblemSpec,
    v: &VectorField,
    g: &VectorField,
    obj: ObjectiveValue,
    ls: &mut LineSearchState,
    counters: &mut Counters,
) -> std::result::Result<QStep, Stagnation> {
    if g.inf_norm() == 0.0 {
        return Ok(QStep {
            v_next: v.clone(),
            objective: obj,
            rho: 0.0,
        });
    }
    let t_start = Instant::now();
    let s = search_direction(g, spec.alpha(), spec.model());
    let slope = inner_vec(g, &s);
    let mut trial_time = 0.0;
    let mut best: Option<(VectorField, ObjectiveValue)> = None;
    let outcome = backtrack(ls, obj.total, slope, |rho| {
        let mut cand = v.clone();
        cand.add_scaled(&s, rho);
        let t0 = Instant::now();
        let o = evaluate_objective(spec, &cand, counters);
        trial_time += t0.elapsed().as_secs_f64();
        best = Some((cand, o));
        o.total
    });
    counters.t_q += t_start.elapsed().as_secs_f64() - trial_time;
    match outcome {
        Ok((rho, _)) => {
            let (v_next, objective) = best.expect("at least one trial ran");
            Ok(QStep {
                v_next,
                objective,
                rho,
            })
        }
        Err(s) => Err(s),
    }
}

/// The spec-facing fixed-point map: evaluates the gradient at `v` itself and
/// hands it back alongside the step, so callers never re-solve for it.
pub struct QMapOutcome {
    pub v_next: VectorField,
    pub g_at_v: VectorField,
    pub obj_at_v: ObjectiveValue,
    pub objective: ObjectiveValue,
    pub rho: f64,
}

pub fn q_map(
    spec: &ProblemSpec,
    v: &VectorField,
    ls: &mut LineSearchState,
    counters: &mut Counters,
) -> std::result::Result<QMapOutcome, Stagnation> {
    let (g, obj) = evaluate_gradient(spec, v, counters);
    let step = q_step(spec, v, &g, obj, ls, counters)?;
    Ok(QMapOutcome {
        v_next: step.v_next,
        g_at_v: g,
        obj_at_v: obj,
        objective: step.objective,
        rho: step.rho,
    })
}

/// Plain fixed-point iteration of `q` from `v = 0`: the descent baseline
/// every accelerated method is measured against.
pub fn rpgd_solve(spec: &ProblemSpec, stop: &StopCriteria) -> SolveReport {
    let t_start = Instant::now();
    let mut counters = Counters::default();
    let mut ls = LineSearchState::default();
    let mut v = VectorField::zeros(spec.grid());
    let (mut g, mut obj) = evaluate_gradient(spec, &v, &mut counters);
    let g0_norm = g.inf_norm();
    let obj0 = obj;
    let mut gnorm = g0_norm;
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: obj.total,
        grad_norm: gnorm,
    }];
    let mut status = Status::IterCap;
    let mut iterations = stop.n_iter;
    for k in 0..=stop.n_iter {
        if gnorm <= stop.eps_rel * g0_norm {
            status = Status::Converged;
            iterations = k;
            break;
        }
        if k == stop.n_iter {
            status = Status::IterCap;
            iterations = k;
            break;
        }
        match q_step(spec, &v, &g, obj, &mut ls, &mut counters) {
            Ok(step) => {
                v = step.v_next;
            }
            Err(Stagnation) => {
                status = Status::Stagnated;
                iterations = k;
                break;
            }
        }
        let (gn, on) = evaluate_gradient(spec, &v, &mut counters);
        g = gn;
        obj = on;
        gnorm = g.inf_norm();
        trace.push(IterRecord {
            iter: k + 1,
            objective: obj.total,
            grad_norm: gnorm,
        });
    }
    let dist = if obj0.mismatch > 0.0 {
        (obj.mismatch / obj0.mismatch).sqrt()
    } else {
        0.0
    };
    SolveReport {
        v,
        status,
        iterations,
        counters,
        objective: obj,
        grad_norm: gnorm,
        grad_norm0: g0_norm,
        dist,
        wall_time: t_start.elapsed().as_secs_f64(),
        trace,
    }
}

/// Abstraction of the damped fixed-point iteration consumed by the mixing
/// accelerators: anything that exposes a gradient/objective oracle and a
/// preliminary step. Implemented by [`DescentMap`] for the transport
/// problem and by small linear maps in tests, which is what lets the exact
/// production loop be validated against classical Krylov behavior.
pub trait FixedPointMap {
    fn dim(&self) -> usize;
    /// Gradient and objective at `v`.
    fn grad_obj(&mut self, v: &[f64]) -> (Vec<f64>, f64);
    /// Preliminary step from `v`, given its gradient and objective.
    fn q(&mut self, v: &[f64], g: &[f64], obj: f64)
        -> std::result::Result<Vec<f64>, Stagnation>;
    /// Hook for mixing least-squares wall time.
    fn note_lsq_time(&mut self, _seconds: f64) {}
}

/// The transport problem as a [`FixedPointMap`] over flattened fields.
pub struct DescentMap<'a> {
    spec: &'a ProblemSpec,
    pub ls: LineSearchState,
    pub counters: Counters,
    /// Objective split of the most recent `grad_obj` call.
    pub last_objective: Option<ObjectiveValue>,
    /// Objective split of the first `grad_obj` call (the initial iterate).
    pub first_objective: Option<ObjectiveValue>,
}

impl<'a> DescentMap<'a> {
    pub fn new(spec: &'a ProblemSpec) -> Self {
        Self {
            spec,
            ls: LineSearchState::default(),
            counters: Counters::default(),
            last_objective: None,
            first_objective: None,
        }
    }

    pub fn spec(&self) -> &ProblemSpec {
        self.spec
    }

    fn unflatten(&self, flat: &[f64]) -> VectorField {
        VectorField::from_flat(self.spec.grid(), flat).expect("flat layout fixed by the grid")
    }
}

impl FixedPointMap for DescentMap<'_> {
    fn dim(&self) -> usize {
        2 * self.spec.grid().len()
    }

    fn grad_obj(&mut self, v: &[f64]) -> (Vec<f64>, f64) {
        let vf = self.unflatten(v);
        let (g, obj) = evaluate_gradient(self.spec, &vf, &mut self.counters);
        self.last_objective = Some(obj);
        self.first_objective.get_or_insert(obj);
        (g.flatten(), obj.total)
    }

    fn q(
        &mut self,
        v: &[f64],
        g: &[f64],
        obj: f64,
    ) -> std::result::Result<Vec<f64>, Stagnation> {
        let vf = self.unflatten(v);
        let gf = self.unflatten(g);
        // Only the total enters the Armijo test; the split of the current
        // objective is not needed here.
        let obj_val = ObjectiveValue {
            total: obj,
            mismatch: 0.0,
            regularization: 0.0,
        };
        let step = q_step(self.spec, &vf, &gf, obj_val, &mut self.ls, &mut self.counters)?;
        Ok(step.v_next.flatten())
    }

    fn note_lsq_time(&mut self, seconds: f64) {
        self.counters.t_ls += seconds;
    }
}
