//! Semi-Lagrangian integration of the transport equations.
//!
//! All solvers share one characteristic tracer: a second order Runge-Kutta
//! midpoint step `X = x - dt*v(x - (dt/2)*v(x))` evaluated per grid node,
//! with the velocity read off the grid at the node and spline-interpolated at
//! the midpoint. The velocity is stationary, so one traced point set serves
//! every step of a sweep; backward sweeps pass a negative `dt`, which traces
//! the forward characteristic feet they need.
//!
//! Continuity-form equations (`d/dt q + div(q v) = 0`, forward or backward)
//! are integrated in advective form with the compression handled by a
//! per-step integrating factor `exp(-int div v dt)`, approximated with the
//! value of `div v` at the characteristic midpoint. For divergence-free
//! velocities the factor collapses to 1 and continuity transport coincides
//! with plain advection.
//!
//! Time slices use `nt` uniform cells on `[0, 1]`, so a trajectory holds
//! `nt + 1` slices.

use crate::error::{Error, Result};
use crate::grid::{spectral_divergence, spectral_gradient, GridSpec, ScalarField, VectorField};
use crate::interp::{SplineInterp, VectorInterp};

/// Trajectory of a scalar quantity: `nt + 1` time slices on one grid.
#[derive(Clone, Debug)]
pub struct TimeSeriesField {
    grid: GridSpec,
    slices: Vec<ScalarField>,
}

impl TimeSeriesField {
    pub fn from_slices(grid: GridSpec, slices: Vec<ScalarField>) -> Result<Self> {
        if slices.len() != grid.nt + 1 {
            return Err(Error::InvalidGrid(format!(
                "trajectory needs {} slices for nt = {}, got {}",
                grid.nt + 1,
                grid.nt,
                slices.len()
            )));
        }
        for s in &slices {
            if !s.grid().same_shape(&grid) {
                return Err(Error::GridMismatch(
                    "trajectory slice on a different grid".into(),
                ));
            }
        }
        Ok(Self { grid, slices })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn slice(&self, j: usize) -> &ScalarField {
        &self.slices[j]
    }

    pub fn slices(&self) -> &[ScalarField] {
        &self.slices
    }

    pub fn first(&self) -> &ScalarField {
        &self.slices[0]
    }

    pub fn last(&self) -> &ScalarField {
        &self.slices[self.slices.len() - 1]
    }
}

/// Characteristic endpoints for one time step, one per grid node, stored
/// unwrapped; interpolation wraps onto the torus at evaluation time.
#[derive(Clone, Debug)]
pub struct DeparturePoints {
    grid: GridSpec,
    x1: Vec<f64>,
    x2: Vec<f64>,
}

impl DeparturePoints {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }
}

/// Trace one RK2 characteristic step of length `dt` from every grid node.
///
/// Positive `dt` yields departure points (where forward transport reads its
/// values); negative `dt` yields the forward feet used by backward sweeps.
pub fn trace_departure(v: &VectorField, dt: f64) -> DeparturePoints {
    trace_with_midpoints(v, dt).0
}

/// Midpoint coordinates come along for free and are reused to evaluate
/// `div v` for integrating factors.
fn trace_with_midpoints(v: &VectorField, dt: f64) -> (DeparturePoints, Vec<f64>, Vec<f64>) {
    let g = v.grid();
    let vi = VectorInterp::new(v);
    let n = g.len();
    let mut fx1 = Vec::with_capacity(n);
    let mut fx2 = Vec::with_capacity(n);
    let mut mx1 = Vec::with_capacity(n);
    let mut mx2 = Vec::with_capacity(n);
    let v1 = v.c1().values();
    let v2 = v.c2().values();
    for i1 in 0..g.n1 {
        for i2 in 0..g.n2 {
            let (x1, x2) = g.node(i1, i2);
            let idx = g.idx(i1, i2);
            let m1 = x1 - 0.5 * dt * v1[idx];
            let m2 = x2 - 0.5 * dt * v2[idx];
            let (vm1, vm2) = vi.eval(m1, m2);
            fx1.push(x1 - dt * vm1);
            fx2.push(x2 - dt * vm2);
            mx1.push(m1);
            mx2.push(m2);
        }
    }
    (
        DeparturePoints {
            grid: g,
            x1: fx1,
            x2: fx2,
        },
        mx1,
        mx2,
    )
}

/// Reusable pieces of one sweep direction: traced feet plus the per-node
/// integrating factor for continuity-form equations.
pub(crate) struct SweepKit {
    pub feet: DeparturePoints,
    /// `exp(-dt * div v)` at the characteristic midpoint of each node.
    pub factor: Vec<f64>,
}

pub(crate) fn sweep_kit(v: &VectorField, dt: f64) -> SweepKit {
    let (feet, mx1, mx2) = trace_with_midpoints(v, dt);
    let div = spectral_divergence(v);
    let di = SplineInterp::new(&div);
    let factor = mx1
        .iter()
        .zip(&mx2)
        .map(|(&a, &b)| (-dt * di.eval(a, b)).exp())
        .collect();
    SweepKit { feet, factor }
}

fn advected(field: &ScalarField, feet: &DeparturePoints) -> ScalarField {
    let sp = SplineInterp::new(field);
    let values = sp.eval_many(&feet.x1, &feet.x2);
    ScalarField::from_values(field.grid(), values).expect("advected slice keeps its grid")
}

/// With zero velocity every characteristic is stationary, so the transported
/// field is constant in time. Returning it directly keeps the solution exact
/// to the bit: a swept identity pass would reintroduce spline round-off, and
/// the optimizers rely on a bitwise-zero gradient when the images already
/// match at `v = 0`.
fn constant_trajectory(field: &ScalarField, g: GridSpec) -> TimeSeriesField {
    TimeSeriesField {
        grid: g,
        slices: vec![field.clone(); g.nt + 1],
    }
}

/// Forward solve of `d/dt m + grad(m).v = 0` from `m(0) = m0`.
pub fn solve_state_advection(m0: &ScalarField, v: &VectorField) -> TimeSeriesField {
    let g = v.grid();
    debug_assert!(m0.grid().same_shape(&g));
    if v.inf_norm() == 0.0 {
        return constant_trajectory(m0, g);
    }
    let feet = trace_departure(v, g.ht());
    let mut slices = Vec::with_capacity(g.nt + 1);
    slices.push(m0.clone());
    for j in 0..g.nt {
        let next = advected(&slices[j], &feet);
        slices.push(next);
    }
    TimeSeriesField { grid: g, slices }
}

/// Backward solve of the pure advection equation from a terminal slice:
/// `-d/dt q - grad(q).v = 0`, `q(1)` given. Used as the adjoint of the
/// mass-preserving model, where the adjoint carries no compression term.
pub fn solve_advection_backward(terminal: &ScalarField, v: &VectorField) -> TimeSeriesField {
    let g = v.grid();
    debug_assert!(terminal.grid().same_shape(&g));
    if v.inf_norm() == 0.0 {
        return constant_trajectory(terminal, g);
    }
    let feet = trace_departure(v, -g.ht());
    let mut slices = vec![ScalarField::zeros(g); g.nt + 1];
    slices[g.nt] = terminal.clone();
    for j in (0..g.nt).rev() {
        slices[j] = advected(&slices[j + 1], &feet);
    }
    TimeSeriesField { grid: g, slices }
}

/// Forward solve of the continuity equation `d/dt q + div(q v) = 0` from
/// `q(0) = q0`. Mass is conserved up to the accuracy of the midpoint
/// integrating factor.
pub fn solve_continuity_forward(q0: &ScalarField, v: &VectorField) -> TimeSeriesField {
    let g = v.grid();
    debug_assert!(q0.grid().same_shape(&g));
    if v.inf_norm() == 0.0 {
        return constant_trajectory(q0, g);
    }
    let kit = sweep_kit(v, g.ht());
    let mut slices = Vec::with_capacity(g.nt + 1);
    slices.push(q0.clone());
    for j in 0..g.nt {
        let mut next = advected(&slices[j], &kit.feet);
        for (val, f) in next.values_mut().iter_mut().zip(&kit.factor) {
            *val *= f;
        }
        slices.push(next);
    }
    TimeSeriesField { grid: g, slices }
}

/// Backward solve of the continuity-form adjoint equation
/// `-d/dt q - div(q v) = 0` from the terminal slice `m_final - m1`.
pub fn solve_adjoint(m_final: &ScalarField, m1: &ScalarField, v: &VectorField) -> TimeSeriesField {
    let terminal = ScalarField::sub(m_final, m1);
    solve_continuity_backward(&terminal, v)
}

/// Backward continuity-form solve from an arbitrary terminal slice.
pub fn solve_continuity_backward(terminal: &ScalarField, v: &VectorField) -> TimeSeriesField {
    let g = v.grid();
    debug_assert!(terminal.grid().same_shape(&g));
    if v.inf_norm() == 0.0 {
        return constant_trajectory(terminal, g);
    }
    let kit = sweep_kit(v, -g.ht());
    continuity_backward_sweep(&kit, terminal)
}

/// Core of the backward continuity sweep over a precomputed kit. The Newton
/// matvec runs this many times per outer iterate against one traced set of
/// characteristics.
pub(crate) fn continuity_backward_sweep(kit: &SweepKit, terminal: &ScalarField) -> TimeSeriesField {
    let g = kit.feet.grid();
    let mut slices = vec![ScalarField::zeros(g); g.nt + 1];
    slices[g.nt] = terminal.clone();
    for j in (0..g.nt).rev() {
        let mut prev = advected(&slices[j + 1], &kit.feet);
        for (val, f) in prev.values_mut().iter_mut().zip(&kit.factor) {
            *val *= f;
        }
        slices[j] = prev;
    }
    TimeSeriesField { grid: g, slices }
}

/// Forward advection sweep from a zero initial slice with trapezoidal
/// source accumulation along the characteristics: the shared core of the
/// linearized state solves. `sources` holds one slice per time level.
pub(crate) fn incremental_state_sweep(
    feet: &DeparturePoints,
    sources: &[ScalarField],
) -> TimeSeriesField {
    let g = feet.grid();
    debug_assert_eq!(sources.len(), g.nt + 1);
    let ht = g.ht();
    let mut slices = Vec::with_capacity(g.nt + 1);
    slices.push(ScalarField::zeros(g));
    for j in 0..g.nt {
        let mut next = advected(&slices[j], feet);
        let s_at_feet = advected(&sources[j], feet);
        for ((val, sj), sj1) in next
            .values_mut()
            .iter_mut()
            .zip(s_at_feet.values())
            .zip(sources[j + 1].values())
        {
            *val -= 0.5 * ht * (sj + sj1);
        }
        slices.push(next);
    }
    TimeSeriesField { grid: g, slices }
}

/// Forward continuity sweep from a zero initial slice with trapezoidal
/// source accumulation: the linearized mass-transport state. Sources are
/// compressed along with the solution, so the level-`j` contribution picks
/// up the same integrating factor as the carried value.
pub(crate) fn incremental_continuity_sweep(
    kit: &SweepKit,
    sources: &[ScalarField],
) -> TimeSeriesField {
    let g = kit.feet.grid();
    debug_assert_eq!(sources.len(), g.nt + 1);
    let ht = g.ht();
    let mut slices = Vec::with_capacity(g.nt + 1);
    slices.push(ScalarField::zeros(g));
    for j in 0..g.nt {
        let mut next = advected(&slices[j], &kit.feet);
        let s_at_feet = advected(&sources[j], &kit.feet);
        for (((val, sj), sj1), f) in next
            .values_mut()
            .iter_mut()
            .zip(s_at_feet.values())
            .zip(sources[j + 1].values())
            .zip(&kit.factor)
        {
            *val = f * (*val) - 0.5 * ht * (f * sj + sj1);
        }
        slices.push(next);
    }
    TimeSeriesField { grid: g, slices }
}

/// Backward advection sweep over precomputed feet (no compression factor):
/// the linearized adjoint of the mass-transport model.
pub(crate) fn advection_backward_sweep(
    feet: &DeparturePoints,
    terminal: &ScalarField,
) -> TimeSeriesField {
    let g = feet.grid();
    let mut slices = vec![ScalarField::zeros(g); g.nt + 1];
    slices[g.nt] = terminal.clone();
    for j in (0..g.nt).rev() {
        slices[j] = advected(&slices[j + 1], feet);
    }
    TimeSeriesField { grid: g, slices }
}

/// Linearized state sweep: `d/dt m_t + grad(m_t).v = -grad(m).v_t` with
/// `m_t(0) = 0`, the state trajectory `m` taken from a previous forward
/// solve. Sources enter through per-step trapezoidal accumulation along the
/// traced characteristics.
pub fn solve_incremental_state(
    v: &VectorField,
    v_tilde: &VectorField,
    m: &TimeSeriesField,
) -> TimeSeriesField {
    let g = v.grid();
    let feet = trace_departure(v, g.ht());
    let sources: Vec<ScalarField> = m
        .slices()
        .iter()
        .map(|slice| {
            let grad = spectral_gradient(slice);
            let mut s = ScalarField::mul(grad.c1(), v_tilde.c1());
            s.add_scaled(&ScalarField::mul(grad.c2(), v_tilde.c2()), 1.0);
            s
        })
        .collect();
    incremental_state_sweep(&feet, &sources)
}

/// Linearized adjoint sweep: `-d/dt q - div(q v + lambda v_t) = 0` backward
/// from `q(1) = m_tilde_final`. Passing `lambda = None` drops the
/// `lambda v_t` source, which is the Gauss-Newton variant used by
/// [`crate::newton`].
pub fn solve_incremental_adjoint(
    v: &VectorField,
    v_tilde: &VectorField,
    lambda: Option<&TimeSeriesField>,
    m_tilde_final: &ScalarField,
) -> TimeSeriesField {
    let g = v.grid();
    let ht = g.ht();
    let kit = sweep_kit(v, -ht);
    let sources: Option<Vec<ScalarField>> = lambda.map(|lam| {
        lam.slices()
            .iter()
            .map(|slice| {
                let flux = VectorField::from_components(
                    ScalarField::mul(slice, v_tilde.c1()),
                    ScalarField::mul(slice, v_tilde.c2()),
                )
                .expect("flux components share the grid");
                spectral_divergence(&flux)
            })
            .collect()
    });
    let mut slices = vec![ScalarField::zeros(g); g.nt + 1];
    slices[g.nt] = m_tilde_final.clone();
    for j in (0..g.nt).rev() {
        let mut prev = advected(&slices[j + 1], &kit.feet);
        for (val, f) in prev.values_mut().iter_mut().zip(&kit.factor) {
            *val *= f;
        }
        if let Some(src) = &sources {
            let s_at_feet = advected(&src[j + 1], &kit.feet);
            for (((val, sj), sjf), f) in prev
                .values_mut()
                .iter_mut()
                .zip(src[j].values())
                .zip(s_at_feet.values())
                .zip(&kit.factor)
            {
                *val += 0.5 * ht * (sj + f * sjf);
            }
        }
        slices[j] = prev;
    }
    TimeSeriesField { grid: g, slices }
}

/// End-to-end backward flow map `y`: the composition of the per-step
/// departure maps, so `y(x)` is where the characteristic through `(x, t=1)`
/// sits at `t = 0`. Coordinates are unwrapped.
pub fn compute_flow_map(v: &VectorField) -> VectorField {
    let g = v.grid();
    let ht = g.ht();
    let vi = VectorInterp::new(v);
    let mut y1 = Vec::with_capacity(g.len());
    let mut y2 = Vec::with_capacity(g.len());
    for i1 in 0..g.n1 {
        for i2 in 0..g.n2 {
            let (x1, x2) = g.node(i1, i2);
            y1.push(x1);
            y2.push(x2);
        }
    }
    for _ in 0..g.nt {
        for (a, b) in y1.iter_mut().zip(y2.iter_mut()) {
            let (v1, v2) = vi.eval(*a, *b);
            let m1 = *a - 0.5 * ht * v1;
            let m2 = *b - 0.5 * ht * v2;
            let (w1, w2) = vi.eval(m1, m2);
            *a -= ht * w1;
            *b -= ht * w2;
        }
    }
    VectorField::from_components(
        ScalarField::from_values(g, y1).expect("flow map keeps its grid"),
        ScalarField::from_values(g, y2).expect("flow map keeps its grid"),
    )
    .expect("flow map components share the grid")
}

/// Determinant of the deformation gradient of a flow map: the displacement
/// `y - x` is periodic, its Jacobian is formed spectrally, and the identity
/// is added back before taking the determinant.
pub fn det_deformation_gradient(y: &VectorField) -> ScalarField {
    let g = y.grid();
    let mut d1 = y.c1().clone();
    let mut d2 = y.c2().clone();
    for i1 in 0..g.n1 {
        for i2 in 0..g.n2 {
            let (x1, x2) = g.node(i1, i2);
            let idx = g.idx(i1, i2);
            d1.values_mut()[idx] -= x1;
            d2.values_mut()[idx] -= x2;
        }
    }
    let j1 = spectral_gradient(&d1);
    let j2 = spectral_gradient(&d2);
    let mut det = ScalarField::zeros(g);
    for i in 0..g.len() {
        let a11 = 1.0 + j1.c1().values()[i];
        let a12 = j1.c2().values()[i];
        let a21 = j2.c1().values()[i];
        let a22 = 1.0 + j2.c2().values()[i];
        det.values_mut()[i] = a11 * a22 - a12 * a21;
    }
    det
}
