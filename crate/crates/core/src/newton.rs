//! Inexact Newton-Krylov outer loop with a matrix-free Gauss-Newton
//! curvature product.
//!
//! Each outer iteration freezes the current velocity, linearizes the
//! transport constraint around it, and solves the Newton system
//! approximately with a Krylov method whose forcing tolerance tightens as
//! the gradient shrinks. The curvature product never forms a matrix: one
//! application costs a linearized forward sweep and a linearized adjoint
//! sweep, reusing the characteristic feet and compression factors traced
//! once per outer iterate. Three preconditioners are offered: the exact
//! inverse of the Sobolev penalty, a symmetrized two-level scheme that
//! resolves the mismatch curvature on a coarsened grid, and the
//! zero-velocity curvature operator inverted by an inner CG run.

use std::cell::{Cell, RefCell};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fixedpoint::{backtrack, search_direction, LineSearchState, StopCriteria};
use crate::grid::{
    apply_half_inverse_regularization, apply_inverse_regularization, apply_regularization,
    inner_vec, leray_project, prolong_vector, restrict, restrict_vector, spectral_divergence,
    spectral_gradient, GridSpec, ScalarField, VectorField,
};
use crate::krylov::{gmres, pcg, KrylovResult};
use crate::models::{
    evaluate_gradient_full, evaluate_objective, forward_trajectory, trapezoid_sum, Counters,
    ModelKind, ProblemSpec,
};
use crate::report::{IterRecord, SolveReport, Status};
use crate::transport::{
    advection_backward_sweep, continuity_backward_sweep, incremental_continuity_sweep,
    incremental_state_sweep, solve_incremental_adjoint, sweep_kit, trace_departure,
    DeparturePoints, SweepKit, TimeSeriesField,
};

/// Which operator approximately inverts the Newton system inside the Krylov
/// solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NkPreconditioner {
    /// Exact spectral inverse of the Sobolev penalty block. Cheap and
    /// parameter-free; ignores the mismatch curvature entirely.
    InversePenalty,
    /// Symmetrized two-level scheme: split off the square root of the
    /// penalty, resolve the remaining system on a grid coarsened by two
    /// with a short CG run, and pass the fine-only remainder through the
    /// identity block.
    TwoLevel,
    /// Curvature operator at zero velocity, inverted per application by a
    /// penalty-preconditioned CG run. Exact at the first outer iterate of
    /// the intensity models and a fixed useful approximation afterwards.
    InitialHessian,
}

/// Knobs of the Newton-Krylov solver besides the shared stopping rule.
#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub preconditioner: NkPreconditioner,
    /// Cap on Krylov iterations per outer step.
    pub max_inner: usize,
    /// Fixed CG budget for the coarse solve inside the two-level scheme.
    pub coarse_cg_iters: usize,
    /// Relative tolerance of that coarse solve; whichever of budget and
    /// tolerance is hit first ends the coarse run.
    pub coarse_cg_tol: f64,
    /// Relative tolerance of the CG run that applies the zero-velocity
    /// inverse.
    pub h0_tol: f64,
    /// Iteration cap of that CG run.
    pub h0_cap: usize,
}

impl NewtonConfig {
    pub fn new(preconditioner: NkPreconditioner) -> Self {
        NewtonConfig {
            preconditioner,
            max_inner: 100,
            coarse_cg_iters: 5,
            coarse_cg_tol: 1e-1,
            h0_tol: 1e-2,
            h0_cap: 50,
        }
    }
}

/// Pointwise dot product of two vector fields.
fn pointwise_dot(a: &VectorField, b: &VectorField) -> ScalarField {
    let mut out = ScalarField::mul(a.c1(), b.c1());
    let second = ScalarField::mul(a.c2(), b.c2());
    for (o, s) in out.values_mut().iter_mut().zip(second.values()) {
        *o += s;
    }
    out
}

/// Vector field scaled pointwise by a weight field.
fn weight_vector(a: &VectorField, w: &ScalarField) -> VectorField {
    VectorField::from_components(ScalarField::mul(w, a.c1()), ScalarField::mul(w, a.c2()))
        .expect("weighted components share the grid")
}

/// Frozen linearization point for curvature products. Built once per outer
/// iterate; every product at this iterate then reuses the state trajectory,
/// its spectral gradients, and the traced characteristic sweeps instead of
/// recomputing them per application.
pub struct GnContext<'a> {
    spec: &'a ProblemSpec,
    v: VectorField,
    state: TimeSeriesField,
    /// Spectral gradients of the state slices; source assembly and product
    /// body for the intensity models.
    grad_state: Option<Vec<VectorField>>,
    /// Forward feet for the intensity models' linearized state sweep.
    fwd_feet: Option<DeparturePoints>,
    /// Backward compression kit for their linearized adjoint sweep.
    bwd_kit: Option<SweepKit>,
    /// Forward compression kit for the mass-transport linearized state.
    fwd_kit: Option<SweepKit>,
    /// Backward feet for the mass-transport linearized adjoint.
    bwd_feet: Option<DeparturePoints>,
    /// Adjoint trajectory, needed only by the full second-order product.
    adjoint: Option<TimeSeriesField>,
}

impl<'a> GnContext<'a> {
    pub fn new(spec: &'a ProblemSpec, v: &VectorField, state: TimeSeriesField) -> Self {
        Self::with_adjoint(spec, v, state, None)
    }

    pub fn with_adjoint(
        spec: &'a ProblemSpec,
        v: &VectorField,
        state: TimeSeriesField,
        adjoint: Option<TimeSeriesField>,
    ) -> Self {
        let ht = spec.grid().ht();
        let mut ctx = GnContext {
            spec,
            v: v.clone(),
            grad_state: None,
            fwd_feet: None,
            bwd_kit: None,
            fwd_kit: None,
            bwd_feet: None,
            adjoint,
            state,
        };
        match spec.model() {
            ModelKind::Advection | ModelKind::Incompressible => {
                ctx.grad_state = Some(ctx.state.slices().iter().map(spectral_gradient).collect());
                ctx.fwd_feet = Some(trace_departure(v, ht));
                ctx.bwd_kit = Some(sweep_kit(v, -ht));
            }
            ModelKind::Continuity => {
                ctx.fwd_kit = Some(sweep_kit(v, ht));
                ctx.bwd_feet = Some(trace_departure(v, -ht));
            }
        }
        ctx
    }

    pub fn grid(&self) -> GridSpec {
        self.spec.grid()
    }

    /// Mismatch block of the curvature product: everything except the
    /// penalty. Touches no counters; [`GnContext::matvec`] adds the
    /// bookkeeping, and the two-level scheme calls this directly on its
    /// coarse problem, where the work is deliberately left out of the tally.
    pub fn data_term(&self, dir: &VectorField) -> VectorField {
        let g = self.spec.grid();
        match self.spec.model() {
            ModelKind::Advection | ModelKind::Incompressible => {
                let grads = self.grad_state.as_ref().expect("intensity context");
                let sources: Vec<ScalarField> =
                    grads.iter().map(|gm| pointwise_dot(gm, dir)).collect();
                let feet = self.fwd_feet.as_ref().expect("intensity context");
                let kit = self.bwd_kit.as_ref().expect("intensity context");
                let m_t = incremental_state_sweep(feet, &sources);
                let lam_t = continuity_backward_sweep(kit, m_t.last());
                trapezoid_sum(g, |j| {
                    let mut b = weight_vector(&grads[j], lam_t.slice(j));
                    b.scale(-1.0);
                    b
                })
            }
            ModelKind::Continuity => {
                let sources: Vec<ScalarField> = self
                    .state
                    .slices()
                    .iter()
                    .map(|pi| spectral_divergence(&weight_vector(dir, pi)))
                    .collect();
                let kit = self.fwd_kit.as_ref().expect("mass-transport context");
                let feet = self.bwd_feet.as_ref().expect("mass-transport context");
                let pi_t = incremental_continuity_sweep(kit, &sources);
                let lam_t = advection_backward_sweep(feet, pi_t.last());
                trapezoid_sum(g, |j| {
                    let grad_l = spectral_gradient(lam_t.slice(j));
                    weight_vector(&grad_l, self.state.slice(j))
                })
            }
        }
    }

    /// Gauss-Newton product around the frozen iterate: penalty plus the
    /// mismatch block, with the velocity constraint projected on both sides
    /// for the incompressible model. Costs one linearized forward and one
    /// linearized adjoint sweep; the matvec counter and the pde tally move
    /// accordingly.
    pub fn matvec(&self, dir: &VectorField, counters: &mut Counters) -> VectorField {
        let t0 = Instant::now();
        let project = self.spec.model() == ModelKind::Incompressible;
        let projected;
        let dir = if project {
            projected = leray_project(dir);
            &projected
        } else {
            dir
        };
        let mut out = apply_regularization(dir, self.spec.alpha(), self.spec.model().reg_order())
            .expect("penalty order is fixed by the model");
        out.add_scaled(&self.data_term(dir), 1.0);
        if project {
            out = leray_project(&out);
        }
        counters.record_matvec();
        counters.t_pdes += t0.elapsed().as_secs_f64();
        out
    }

    /// Full second-order product for the intensity advection model: the
    /// Gauss-Newton block plus the residual-weighted terms, obtained by
    /// sourcing the linearized adjoint with the frozen adjoint trajectory.
    /// Kept for finite-difference cross-checks, not used by the solver.
    pub fn matvec_full(&self, dir: &VectorField, counters: &mut Counters) -> VectorField {
        debug_assert_eq!(self.spec.model(), ModelKind::Advection);
        let t0 = Instant::now();
        let adjoint = self
            .adjoint
            .as_ref()
            .expect("full product needs the adjoint trajectory");
        let grads = self.grad_state.as_ref().expect("intensity context");
        let sources: Vec<ScalarField> = grads.iter().map(|gm| pointwise_dot(gm, dir)).collect();
        let feet = self.fwd_feet.as_ref().expect("intensity context");
        let m_t = incremental_state_sweep(feet, &sources);
        let lam_t = solve_incremental_adjoint(&self.v, dir, Some(adjoint), m_t.last());
        let mut out = apply_regularization(dir, self.spec.alpha(), self.spec.model().reg_order())
            .expect("penalty order is fixed by the model");
        let body = trapezoid_sum(self.spec.grid(), |j| {
            let mut b = weight_vector(&grads[j], lam_t.slice(j));
            let grad_mt = spectral_gradient(m_t.slice(j));
            b.add_scaled(&weight_vector(&grad_mt, adjoint.slice(j)), 1.0);
            b.scale(-1.0);
            b
        });
        out.add_scaled(&body, 1.0);
        counters.record_matvec();
        counters.t_pdes += t0.elapsed().as_secs_f64();
        out
    }
}

/// Curvature at zero velocity for the intensity models: the penalty plus
/// the pointwise rank-one mismatch block built from the initial image
/// gradient. Symmetric positive definite for every model, which is what a
/// preconditioner needs, so it is also used unchanged for mass transport.
pub fn h0_apply(dir: &VectorField, grad_m0: &VectorField, alpha: f64, order: u32) -> VectorField {
    let mut out =
        apply_regularization(dir, alpha, order).expect("penalty order is fixed by the model");
    let along = pointwise_dot(grad_m0, dir);
    out.add_scaled(&weight_vector(grad_m0, &along), 1.0);
    out
}

/// Apply the inverse of the zero-velocity curvature by penalty-preconditioned
/// CG. Krylov work inside a preconditioner application is deliberately not
/// counted as transport work: it involves no sweeps.
pub fn h0_solve(
    rhs: &VectorField,
    grad_m0: &VectorField,
    alpha: f64,
    order: u32,
    tol: f64,
    cap: usize,
) -> KrylovResult {
    pcg(
        |x| h0_apply(x, grad_m0, alpha, order),
        |r| apply_inverse_regularization(r, alpha, order).expect("penalty order is fixed"),
        rhs,
        tol,
        cap,
    )
}

/// One application of the symmetrized two-level preconditioner.
///
/// With the penalty square root split off symmetrically, the remaining
/// system is the identity plus a compact mismatch block. That block lives
/// on the smooth end of the spectrum, so it is resolved on a grid coarsened
/// by two with a short CG run around the supplied coarse linearization,
/// while the fine-only remainder rides through the identity. Budget and
/// tolerance of the coarse run are both tunable; production uses a handful
/// of iterations, the tests tighten the run to validate symmetry of the
/// assembled map.
pub fn two_level_apply(
    r: &VectorField,
    coarse: &GnContext<'_>,
    alpha: f64,
    order: u32,
    cg_tol: f64,
    cg_iters: usize,
) -> VectorField {
    let fine = r.grid();
    let cg = coarse.grid();
    let project = coarse.spec.model() == ModelKind::Incompressible;
    let w = apply_half_inverse_regularization(r, alpha, order).expect("penalty order is fixed");
    let w_c = restrict_vector(&w, cg.n1, cg.n2).expect("coarse grid halves the fine one");
    let solved = pcg(
        |z| {
            let mut half = apply_half_inverse_regularization(z, alpha, order)
                .expect("penalty order is fixed");
            if project {
                half = leray_project(&half);
            }
            let mut out = apply_half_inverse_regularization(&coarse.data_term(&half), alpha, order)
                .expect("penalty order is fixed");
            if project {
                out = leray_project(&out);
            }
            out.add_scaled(z, 1.0);
            out
        },
        |x| x.clone(),
        &w_c,
        cg_tol,
        cg_iters,
    );
    let mut z = prolong_vector(&solved.solution, fine.n1, fine.n2)
        .expect("prolongation returns to the fine grid");
    let coarse_part =
        prolong_vector(&w_c, fine.n1, fine.n2).expect("prolongation returns to the fine grid");
    z.add_scaled(&w, 1.0);
    z.add_scaled(&coarse_part, -1.0);
    let mut out =
        apply_half_inverse_regularization(&z, alpha, order).expect("penalty order is fixed");
    if project {
        out = leray_project(&out);
    }
    out
}

/// Inexact Newton-Krylov solve from a zero initial velocity.
///
/// Outer iterations stop on the relative max-norm gradient criterion or the
/// iteration budget in `stop`. The Newton system at each iterate is solved
/// by preconditioned CG (or by GMRES for the zero-velocity preconditioner,
/// which enters as a left preconditioner) to a forcing tolerance
/// `min(0.5, sqrt of the relative gradient norm)`, so the inner solves
/// tighten as the outer iteration converges. A step is accepted through an
/// Armijo backtracking search restarted from `ls` every iteration: Newton
/// steps want the unit length first whenever the local model is
/// trustworthy, so carrying a damped step length out of the globalization
/// phase only starves the later iterations (measured to double the outer
/// count on the rectangle benchmark). If the Krylov solve breaks down or
/// returns a non-descent direction, the iteration falls back to the
/// preconditioned steepest-descent step.
pub fn nk_solve(
    spec: &ProblemSpec,
    config: &NewtonConfig,
    stop: &StopCriteria,
    ls: LineSearchState,
) -> Result<SolveReport> {
    let g = spec.grid();
    let t_start = Instant::now();
    let coarse_dims = if config.preconditioner == NkPreconditioner::TwoLevel {
        // The halved grid must itself be a valid grid (even, at least 4).
        if g.n1 % 4 != 0 || g.n2 % 4 != 0 || g.n1 < 8 || g.n2 < 8 {
            return Err(Error::Config(format!(
                "two-level preconditioning needs grid dimensions divisible by 4 \
                 and at least 8, got {}x{}",
                g.n1, g.n2
            )));
        }
        Some((g.n1 / 2, g.n2 / 2))
    } else {
        None
    };
    let alpha = spec.alpha();
    let order = spec.model().reg_order();
    let project = spec.model() == ModelKind::Incompressible;
    let grad_m0 = spectral_gradient(spec.m0());

    let counters = RefCell::new(Counters::default());
    let mut v = VectorField::zeros(g);
    let first = evaluate_gradient_full(spec, &v, &mut counters.borrow_mut());
    let mut grad = first.gradient;
    let mut obj = first.objective;
    let mut state = Some(first.state);
    let obj0 = obj;
    let g0_norm = grad.inf_norm();
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

        let ctx = GnContext::new(spec, &v, state.take().expect("state is refreshed every step"));
        let mut rhs = grad.clone();
        rhs.scale(-1.0);
        let eta = (gnorm / g0_norm).sqrt().min(0.5);

        let inner = match config.preconditioner {
            NkPreconditioner::InversePenalty => pcg(
                |x| ctx.matvec(x, &mut counters.borrow_mut()),
                |r| {
                    let mut z = apply_inverse_regularization(r, alpha, order)
                        .expect("penalty order is fixed");
                    if project {
                        z = leray_project(&z);
                    }
                    z
                },
                &rhs,
                eta,
                config.max_inner,
            ),
            NkPreconditioner::TwoLevel => {
                let (cn1, cn2) = coarse_dims.expect("validated on entry");
                let t0 = Instant::now();
                let coarse_spec = spec.with_prepared_fields(
                    restrict(spec.m0(), cn1, cn2)?,
                    restrict(spec.m1(), cn1, cn2)?,
                )?;
                let coarse_v = restrict_vector(&v, cn1, cn2)?;
                let coarse_state = forward_trajectory(&coarse_spec, &coarse_v);
                let coarse_ctx = GnContext::new(&coarse_spec, &coarse_v, coarse_state);
                counters.borrow_mut().t_pdes += t0.elapsed().as_secs_f64();
                pcg(
                    |x| ctx.matvec(x, &mut counters.borrow_mut()),
                    |r| {
                        let t1 = Instant::now();
                        let z = two_level_apply(
                            r,
                            &coarse_ctx,
                            alpha,
                            order,
                            config.coarse_cg_tol,
                            config.coarse_cg_iters,
                        );
                        counters.borrow_mut().t_pdes += t1.elapsed().as_secs_f64();
                        z
                    },
                    &rhs,
                    eta,
                    config.max_inner,
                )
            }
            NkPreconditioner::InitialHessian => {
                let prec = |r: &VectorField| {
                    let mut z = h0_solve(r, &grad_m0, alpha, order, config.h0_tol, config.h0_cap)
                        .solution;
                    if project {
                        z = leray_project(&z);
                    }
                    z
                };
                let rhs0 = prec(&rhs);
                gmres(
                    |x| {
                        let hx = ctx.matvec(x, &mut counters.borrow_mut());
                        prec(&hx)
                    },
                    &rhs0,
                    eta,
                    config.max_inner,
                )
            }
        };

        let mut step = inner.solution;
        let mut slope = inner_vec(&step, &grad);
        if inner.breakdown || !(slope < 0.0) {
            step = search_direction(&grad, alpha, spec.model());
            slope = inner_vec(&step, &grad);
        }
        if !(slope < 0.0) {
            status = Status::Stagnated;
            iterations = k;
            break;
        }

        let t_region = Instant::now();
        let trial_time = Cell::new(0.0);
        let candidate = RefCell::new(None);
        let mut ls_k = ls;
        let searched = backtrack(&mut ls_k, obj.total, slope, |rho| {
            let t_trial = Instant::now();
            let mut trial = v.clone();
            trial.add_scaled(&step, rho);
            let value = evaluate_objective(spec, &trial, &mut counters.borrow_mut());
            *candidate.borrow_mut() = Some(trial);
            trial_time.set(trial_time.get() + t_trial.elapsed().as_secs_f64());
            value.total
        });
        counters.borrow_mut().t_q += t_region.elapsed().as_secs_f64() - trial_time.get();
        match searched {
            Ok(_) => {
                v = candidate
                    .borrow_mut()
                    .take()
                    .expect("an accepted search evaluated at least one candidate");
            }
            Err(_) => {
                status = Status::Stagnated;
                iterations = k;
                break;
            }
        }

        let refreshed = evaluate_gradient_full(spec, &v, &mut counters.borrow_mut());
        grad = refreshed.gradient;
        obj = refreshed.objective;
        state = Some(refreshed.state);
        gnorm = grad.inf_norm();
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
    Ok(SolveReport {
        v,
        status,
        iterations,
        counters: counters.into_inner(),
        objective: obj,
        grad_norm: gnorm,
        grad_norm0: g0_norm,
        dist,
        wall_time: t_start.elapsed().as_secs_f64(),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::evaluate_gradient;

    fn grid(n: usize, nt: usize) -> GridSpec {
        GridSpec::new(n, n, nt).unwrap()
    }

    fn sinus_pair(g: GridSpec) -> (ScalarField, ScalarField) {
        let m0 = ScalarField::from_fn(g, |x1, x2| 0.5 * (1.0 + x1.sin() * x2.sin()));
        let m1 = ScalarField::from_fn(g, |x1, x2| {
            0.5 * (1.0 + (x1 + 0.4).sin() * (x2 - 0.3).sin())
        });
        (m0, m1)
    }

    /// Spec with the endpoint fields taken verbatim, no smoothing or
    /// rescaling, so analytic comparisons see exactly the fields given.
    fn spec_with(model: ModelKind, alpha: f64, m0: ScalarField, m1: ScalarField) -> ProblemSpec {
        ProblemSpec::new(model, alpha, 0.0, &m0, &m1)
            .unwrap()
            .with_prepared_fields(m0, m1)
            .unwrap()
    }

    fn smooth_velocity(g: GridSpec, scale: f64) -> VectorField {
        VectorField::from_fn(
            g,
            |x1, x2| scale * (x1.sin() * x2.cos() + 0.3 * (2.0 * x2).cos()),
            |x1, x2| scale * (-x1.cos() * x2.sin() + 0.2 * (2.0 * x1).sin()),
        )
    }

    fn second_direction(g: GridSpec) -> VectorField {
        VectorField::from_fn(
            g,
            |x1, x2| (x1 + 0.7).cos() * (2.0 * x2).sin(),
            |x1, x2| (x2 - 0.2).sin() * x1.cos(),
        )
    }

    fn context_at<'a>(spec: &'a ProblemSpec, v: &VectorField) -> GnContext<'a> {
        let state = forward_trajectory(spec, v);
        GnContext::new(spec, v, state)
    }

    fn rel_diff(a: &VectorField, b: &VectorField) -> f64 {
        VectorField::sub(a, b).inf_norm() / b.inf_norm().max(1e-300)
    }

    #[test]
    fn products_vanish_on_the_zero_direction() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        for model in [
            ModelKind::Advection,
            ModelKind::Continuity,
            ModelKind::Incompressible,
        ] {
            let spec = spec_with(model, 1e-2, m0.clone(), m1.clone());
            let v = smooth_velocity(g, 0.2);
            let ctx = context_at(&spec, &v);
            let mut counters = Counters::default();
            let out = ctx.matvec(&VectorField::zeros(g), &mut counters);
            assert_eq!(out.inf_norm(), 0.0, "model {model:?}");
            assert_eq!(counters.matvecs, 1);
            assert_eq!(counters.pdes, 2);
        }
    }

    #[test]
    fn product_is_linear_in_the_direction() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Advection, 1e-2, m0, m1);
        let v = smooth_velocity(g, 0.3);
        let ctx = context_at(&spec, &v);
        let mut counters = Counters::default();
        let u = smooth_velocity(g, 1.0);
        let w = second_direction(g);
        let (a, b) = (0.7, -1.3);
        let mut combo = u.clone();
        combo.scale(a);
        combo.add_scaled(&w, b);
        let lhs = ctx.matvec(&combo, &mut counters);
        let mut rhs = ctx.matvec(&u, &mut counters);
        rhs.scale(a);
        rhs.add_scaled(&ctx.matvec(&w, &mut counters), b);
        assert!(
            rel_diff(&lhs, &rhs) < 1e-10,
            "linearity defect {}",
            rel_diff(&lhs, &rhs)
        );
    }

    #[test]
    fn product_is_symmetric_at_the_initial_iterate() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        for model in [
            ModelKind::Advection,
            ModelKind::Continuity,
            ModelKind::Incompressible,
        ] {
            let spec = spec_with(model, 1e-2, m0.clone(), m1.clone());
            let ctx = context_at(&spec, &VectorField::zeros(g));
            let mut counters = Counters::default();
            let u = smooth_velocity(g, 1.0);
            let w = second_direction(g);
            let hu = ctx.matvec(&u, &mut counters);
            let hw = ctx.matvec(&w, &mut counters);
            let defect = (inner_vec(&hu, &w) - inner_vec(&u, &hw)).abs()
                / (inner_vec(&hu, &hu).sqrt() * inner_vec(&w, &w).sqrt());
            assert!(defect < 1e-12, "model {model:?}: symmetry defect {defect}");
        }
    }

    #[test]
    fn product_stays_nearly_symmetric_away_from_zero() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        for model in [
            ModelKind::Advection,
            ModelKind::Continuity,
            ModelKind::Incompressible,
        ] {
            let spec = spec_with(model, 1e-2, m0.clone(), m1.clone());
            let v = smooth_velocity(g, 0.25);
            let ctx = context_at(&spec, &v);
            let mut counters = Counters::default();
            let u = smooth_velocity(g, 1.0);
            let w = second_direction(g);
            let hu = ctx.matvec(&u, &mut counters);
            let hw = ctx.matvec(&w, &mut counters);
            let defect = (inner_vec(&hu, &w) - inner_vec(&u, &hw)).abs()
                / (inner_vec(&hu, &hu).sqrt() * inner_vec(&w, &w).sqrt());
            assert!(defect < 1e-3, "model {model:?}: symmetry defect {defect}");
        }
    }

    #[test]
    fn product_is_positive_on_random_directions() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Advection, 1e-2, m0, m1);
        let v = smooth_velocity(g, 0.2);
        let ctx = context_at(&spec, &v);
        let mut counters = Counters::default();
        for phase in 0..5 {
            let p = phase as f64;
            let dir = VectorField::from_fn(
                g,
                |x1, x2| (x1 + 0.3 * p).sin() * (x2 * (1.0 + p)).cos(),
                |x1, x2| (x2 - 0.2 * p).cos() * x1.sin(),
            );
            let h = ctx.matvec(&dir, &mut counters);
            let quad = inner_vec(&dir, &h);
            assert!(quad > -1e-10, "phase {phase}: quadratic form {quad}");
        }
    }

    #[test]
    fn intensity_product_at_zero_matches_the_explicit_operator() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Advection, 1e-2, m0.clone(), m1);
        let ctx = context_at(&spec, &VectorField::zeros(g));
        let mut counters = Counters::default();
        let dir = smooth_velocity(g, 1.0);
        let got = ctx.matvec(&dir, &mut counters);
        let expected = h0_apply(&dir, &spectral_gradient(&m0), 1e-2, 2);
        assert!(
            rel_diff(&got, &expected) < 1e-11,
            "defect {}",
            rel_diff(&got, &expected)
        );
    }

    #[test]
    fn mass_product_at_zero_matches_the_explicit_operator() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Continuity, 1e-2, m0.clone(), m1);
        let ctx = context_at(&spec, &VectorField::zeros(g));
        let mut counters = Counters::default();
        let dir = smooth_velocity(g, 1.0);
        let got = ctx.matvec(&dir, &mut counters);
        let div = spectral_divergence(&weight_vector(&dir, &m0));
        let grad_div = spectral_gradient(&div);
        let mut expected = apply_regularization(&dir, 1e-2, 2).unwrap();
        expected.add_scaled(&weight_vector(&grad_div, &m0), -1.0);
        assert!(
            rel_diff(&got, &expected) < 1e-11,
            "defect {}",
            rel_diff(&got, &expected)
        );
    }

    /// With the target manufactured from a forward solve, the residual at
    /// the generating velocity vanishes and the Gauss-Newton product is the
    /// whole second derivative, so a difference quotient of the gradient
    /// must reproduce it.
    #[test]
    fn product_matches_a_gradient_difference_quotient_at_small_residual() {
        let g = grid(32, 16);
        let (m0, _) = sinus_pair(g);
        let v_true = smooth_velocity(g, 0.15);
        let base = spec_with(ModelKind::Advection, 1e-2, m0.clone(), m0.clone());
        let m1 = crate::transport::solve_state_advection(&m0, &v_true)
            .last()
            .clone();
        let spec = base.with_prepared_fields(m0, m1).unwrap();
        let ctx = context_at(&spec, &v_true);
        let mut counters = Counters::default();
        let dir = second_direction(g);
        let h = ctx.matvec(&dir, &mut counters);
        let eps = 1e-4;
        let mut plus = v_true.clone();
        plus.add_scaled(&dir, eps);
        let mut minus = v_true.clone();
        minus.add_scaled(&dir, -eps);
        let (gp, _) = evaluate_gradient(&spec, &plus, &mut counters);
        let (gm, _) = evaluate_gradient(&spec, &minus, &mut counters);
        let mut fd = VectorField::sub(&gp, &gm);
        fd.scale(0.5 / eps);
        assert!(rel_diff(&h, &fd) < 1e-3, "defect {}", rel_diff(&h, &fd));
    }

    /// At a general iterate with a genuine residual the difference quotient
    /// contains the residual-weighted terms too, and only the full product
    /// is expected to match it.
    #[test]
    fn full_product_matches_a_gradient_difference_quotient() {
        let g = grid(32, 16);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Advection, 1e-2, m0, m1);
        let v = smooth_velocity(g, 0.2);
        let mut counters = Counters::default();
        let bundle = evaluate_gradient_full(&spec, &v, &mut counters);
        let ctx = GnContext::with_adjoint(&spec, &v, bundle.state, Some(bundle.adjoint));
        let dir = second_direction(g);
        let h_gn = ctx.matvec(&dir, &mut counters);
        let h_full = ctx.matvec_full(&dir, &mut counters);
        let eps = 1e-4;
        let mut plus = v.clone();
        plus.add_scaled(&dir, eps);
        let mut minus = v.clone();
        minus.add_scaled(&dir, -eps);
        let (gp, _) = evaluate_gradient(&spec, &plus, &mut counters);
        let (gm, _) = evaluate_gradient(&spec, &minus, &mut counters);
        let mut fd = VectorField::sub(&gp, &gm);
        fd.scale(0.5 / eps);
        let full_defect = rel_diff(&h_full, &fd);
        let gn_defect = rel_diff(&h_gn, &fd);
        assert!(full_defect < 1e-3, "full-product defect {full_defect}");
        assert!(
            full_defect < 0.2 * gn_defect,
            "residual terms unaccounted: full {full_defect}, gn {gn_defect}"
        );
    }

    #[test]
    fn zero_velocity_inverse_matches_a_dense_assembly() {
        let g = grid(8, 4);
        let (m0, _) = sinus_pair(g);
        let grad_m0 = spectral_gradient(&m0);
        let alpha = 1e-2;
        let n = 2 * g.len();
        let mut dense = nalgebra::DMatrix::<f64>::zeros(n, n);
        for col in 0..n {
            let mut e = vec![0.0; n];
            e[col] = 1.0;
            let out = h0_apply(&VectorField::from_flat(g, &e).unwrap(), &grad_m0, alpha, 2);
            dense.set_column(col, &nalgebra::DVector::from_vec(out.flatten()));
        }
        let rhs = smooth_velocity(g, 1.0);
        let dense_sol = dense
            .lu()
            .solve(&nalgebra::DVector::from_vec(rhs.flatten()))
            .expect("assembled operator is invertible");
        let got = h0_solve(&rhs, &grad_m0, alpha, 2, 1e-13, 600).solution;
        let want = VectorField::from_flat(g, dense_sol.as_slice()).unwrap();
        assert!(
            rel_diff(&got, &want) < 1e-10,
            "defect {}",
            rel_diff(&got, &want)
        );
    }

    #[test]
    fn zero_velocity_operator_scales_pure_modes_of_a_flat_image() {
        let g = grid(16, 8);
        let flat = ScalarField::from_fn(g, |_, _| 0.4);
        let grad_flat = spectral_gradient(&flat);
        let alpha = 0.05;
        let dir = VectorField::from_fn(g, |x1, _| (2.0 * x1).sin(), |_, x2| (3.0 * x2).cos());
        let out = h0_apply(&dir, &grad_flat, alpha, 2);
        let mut expected = VectorField::from_fn(
            g,
            |x1, _| (4.0f64 + 0.0).powi(2) * (2.0 * x1).sin(),
            |_, x2| (9.0f64 + 0.0).powi(2) * (3.0 * x2).cos(),
        );
        expected.scale(alpha);
        assert!(
            rel_diff(&out, &expected) < 1e-12,
            "defect {}",
            rel_diff(&out, &expected)
        );
    }

    #[test]
    fn flat_images_make_the_zero_velocity_inverse_the_penalty_inverse() {
        let g = grid(16, 8);
        let flat = ScalarField::from_fn(g, |_, _| 0.7);
        let grad_flat = spectral_gradient(&flat);
        let rhs = smooth_velocity(g, 1.0);
        let got = h0_solve(&rhs, &grad_flat, 1e-2, 2, 1e-2, 50);
        let want = apply_inverse_regularization(&rhs, 1e-2, 2).unwrap();
        assert_eq!(got.iterations, 1);
        assert!(
            rel_diff(&got.solution, &want) < 1e-10,
            "defect {}",
            rel_diff(&got.solution, &want)
        );
    }

    #[test]
    fn zero_velocity_solve_meets_tolerance_across_penalty_weights() {
        let g = grid(32, 4);
        let (m0, _) = sinus_pair(g);
        let grad_m0 = spectral_gradient(&m0);
        let rhs = smooth_velocity(g, 1.0);
        for alpha in [1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
            let out = h0_solve(&rhs, &grad_m0, alpha, 2, 1e-2, 50);
            assert!(
                out.converged && out.rel_residual < 1e-2,
                "alpha {alpha}: iterations {}, residual {}",
                out.iterations,
                out.rel_residual
            );
        }
    }

    #[test]
    fn two_level_reduces_to_the_penalty_inverse_without_mismatch_curvature() {
        let g = grid(16, 8);
        let flat = ScalarField::from_fn(g, |_, _| 0.3);
        let spec = spec_with(ModelKind::Advection, 1e-2, flat.clone(), flat.clone());
        let coarse_spec = spec
            .with_prepared_fields(restrict(&flat, 8, 8).unwrap(), restrict(&flat, 8, 8).unwrap())
            .unwrap();
        let v_c = VectorField::zeros(grid(8, 8));
        let coarse_ctx = context_at(&coarse_spec, &v_c);
        let r = smooth_velocity(g, 1.0);
        let got = two_level_apply(&r, &coarse_ctx, 1e-2, 2, 1e-1, 5);
        let want = apply_inverse_regularization(&r, 1e-2, 2).unwrap();
        assert!(
            rel_diff(&got, &want) < 1e-11,
            "defect {}",
            rel_diff(&got, &want)
        );
    }

    #[test]
    fn two_level_is_linear_and_symmetric_when_the_coarse_solve_is_tight() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let alpha = 1e-2;
        let spec = spec_with(ModelKind::Advection, alpha, m0.clone(), m1.clone());
        let coarse_spec = spec
            .with_prepared_fields(restrict(&m0, 8, 8).unwrap(), restrict(&m1, 8, 8).unwrap())
            .unwrap();
        let v_c = VectorField::zeros(grid(8, 8));
        let coarse_ctx = context_at(&coarse_spec, &v_c);
        let apply = |r: &VectorField| two_level_apply(r, &coarse_ctx, alpha, 2, 1e-13, 400);
        let u = smooth_velocity(g, 1.0);
        let w = second_direction(g);
        let pu = apply(&u);
        let pw = apply(&w);
        let sym = (inner_vec(&pu, &w) - inner_vec(&u, &pw)).abs()
            / (inner_vec(&pu, &pu).sqrt() * inner_vec(&w, &w).sqrt());
        assert!(sym < 1e-8, "symmetry defect {sym}");
        let (a, b) = (1.4, -0.6);
        let mut combo = u.clone();
        combo.scale(a);
        combo.add_scaled(&w, b);
        let lhs = apply(&combo);
        let mut rhs = pu.clone();
        rhs.scale(a);
        rhs.add_scaled(&pw, b);
        assert!(
            rel_diff(&lhs, &rhs) < 1e-8,
            "linearity defect {}",
            rel_diff(&lhs, &rhs)
        );
    }

    #[test]
    fn newton_converges_immediately_on_matched_images() {
        let g = grid(16, 8);
        let (m0, _) = sinus_pair(g);
        for pre in [
            NkPreconditioner::InversePenalty,
            NkPreconditioner::TwoLevel,
            NkPreconditioner::InitialHessian,
        ] {
            let spec = spec_with(ModelKind::Advection, 1e-2, m0.clone(), m0.clone());
            let report = nk_solve(
                &spec,
                &NewtonConfig::new(pre),
                &StopCriteria::new(1e-3, 50).unwrap(),
                LineSearchState::default(),
            )
            .unwrap();
            assert_eq!(report.status, Status::Converged, "{pre:?}");
            assert_eq!(report.iterations, 0);
            assert_eq!(report.dist, 0.0);
            assert_eq!(report.counters.pdes, 2);
        }
    }

    #[test]
    fn newton_converges_on_an_easy_pair_with_every_preconditioner() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        for pre in [
            NkPreconditioner::InversePenalty,
            NkPreconditioner::TwoLevel,
            NkPreconditioner::InitialHessian,
        ] {
            let spec = spec_with(ModelKind::Advection, 1e-2, m0.clone(), m1.clone());
            let report = nk_solve(
                &spec,
                &NewtonConfig::new(pre),
                &StopCriteria::new(1e-2, 30).unwrap(),
                LineSearchState::default(),
            )
            .unwrap();
            assert_eq!(report.status, Status::Converged, "{pre:?}");
            assert!(report.iterations <= 15, "{pre:?}: {}", report.iterations);
            for pair in report.trace.windows(2) {
                assert!(
                    pair[1].objective < pair[0].objective,
                    "{pre:?}: objective rose from {} to {}",
                    pair[0].objective,
                    pair[1].objective
                );
            }
            let c = &report.counters;
            assert_eq!(
                c.pdes,
                c.objective_evals + 2 * c.gradient_evals + 2 * c.matvecs,
                "{pre:?}: pde audit"
            );
            assert!(c.matvecs > 0, "{pre:?} never touched the curvature");
        }
    }

    #[test]
    fn newton_handles_the_divergence_free_model() {
        let g = grid(16, 8);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Incompressible, 1e-2, m0, m1);
        let report = nk_solve(
            &spec,
            &NewtonConfig::new(NkPreconditioner::InversePenalty),
            &StopCriteria::new(1e-2, 30).unwrap(),
            LineSearchState::default(),
        )
        .unwrap();
        assert_eq!(report.status, Status::Converged);
        let div = spectral_divergence(&report.v);
        assert!(
            div.values().iter().all(|d| d.abs() < 1e-10),
            "divergence crept in: {}",
            div.values().iter().fold(0.0f64, |m, d| m.max(d.abs()))
        );
    }

    #[test]
    fn two_level_newton_rejects_grids_it_cannot_coarsen() {
        let g = grid(6, 4);
        let (m0, m1) = sinus_pair(g);
        let spec = spec_with(ModelKind::Advection, 1e-2, m0, m1);
        let err = nk_solve(
            &spec,
            &NewtonConfig::new(NkPreconditioner::TwoLevel),
            &StopCriteria::new(1e-2, 10).unwrap(),
            LineSearchState::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
