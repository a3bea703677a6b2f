//! Problem definitions: the three transport models, objective and gradient
//! evaluation, and the work counters every solver reports against.
//!
//! The objective is
//!
//! ```text
//! obj(v) = 1/2 * ||m(1) - m1||^2  +  alpha/2 * <L v, v>
//! ```
//!
//! where `m(1)` is the end slice of the forward transport of `m0` by the
//! stationary velocity `v` and `L` is the Sobolev penalty of order `2p`
//! matching the model. Gradients come from one backward adjoint sweep and a
//! trapezoidal accumulation in time, so a gradient always costs two
//! transport solves on top of nothing else.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{
    apply_regularization, gaussian_smooth, leray_project, spectral_gradient, GridSpec,
    ScalarField, VectorField,
};
use crate::transport::{
    solve_adjoint, solve_advection_backward, solve_continuity_forward, solve_state_advection,
    TimeSeriesField,
};

/// Which transport law constrains the optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Intensities advected along characteristics.
    Advection,
    /// Densities transported with mass conservation.
    Continuity,
    /// Advected intensities with the velocity confined to the
    /// divergence-free subspace.
    Incompressible,
}

impl ModelKind {
    /// Half-order `p` of the velocity penalty `|k|^(2p)`.
    pub fn reg_order(self) -> u32 {
        match self {
            ModelKind::Advection | ModelKind::Continuity => 2,
            ModelKind::Incompressible => 3,
        }
    }

    /// Intensity models rescale their inputs to the unit range; the density
    /// model must not, since rescaling would destroy the mass budget.
    pub fn is_intensity(self) -> bool {
        matches!(self, ModelKind::Advection | ModelKind::Incompressible)
    }
}

/// Affine rescale of a field to the exact range `[0, 1]`. A constant field
/// has no range to stretch and is returned unchanged.
pub fn normalize_unit(f: &ScalarField) -> ScalarField {
    let lo = f.min();
    let hi = f.max();
    let range = hi - lo;
    if range <= 0.0 {
        return f.clone();
    }
    let mut out = f.clone();
    for v in out.values_mut() {
        *v = (*v - lo) / range;
    }
    out
}

/// A fully ingested problem instance: grid, model, penalty weight, and the
/// preprocessed endpoint fields.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    grid: GridSpec,
    model: ModelKind,
    alpha: f64,
    gamma: f64,
    m0: ScalarField,
    m1: ScalarField,
}

impl ProblemSpec {
    /// Ingests raw endpoint fields: both are smoothed with the Gaussian
    /// kernel of width factor `gamma`, and the intensity models then rescale
    /// each to the exact range `[0, 1]`.
    pub fn new(
        model: ModelKind,
        alpha: f64,
        gamma: f64,
        m0_raw: &ScalarField,
        m1_raw: &ScalarField,
    ) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "penalty weight must be positive, got {alpha}"
            )));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothing factor must be nonnegative, got {gamma}"
            )));
        }
        if !m0_raw.grid().same_shape(&m1_raw.grid()) {
            return Err(Error::GridMismatch(
                "endpoint fields live on different grids".into(),
            ));
        }
        let prep = |f: &ScalarField| {
            let smoothed = gaussian_smooth(f, gamma);
            if model.is_intensity() {
                normalize_unit(&smoothed)
            } else {
                smoothed
            }
        };
        Ok(Self {
            grid: m0_raw.grid(),
            model,
            alpha,
            gamma,
            m0: prep(m0_raw),
            m1: prep(m1_raw),
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn m0(&self) -> &ScalarField {
        &self.m0
    }

    pub fn m1(&self) -> &ScalarField {
        &self.m1
    }

    /// Same problem restated on another grid with already prepared endpoint
    /// fields. Used by the coarse level of the two-level preconditioner,
    /// where the fields are restrictions of the fine ones and must not be
    /// smoothed or rescaled again.
    pub fn with_prepared_fields(&self, m0: ScalarField, m1: ScalarField) -> Result<Self> {
        if !m0.grid().same_shape(&m1.grid()) {
            return Err(Error::GridMismatch(
                "endpoint fields live on different grids".into(),
            ));
        }
        Ok(Self {
            grid: m0.grid(),
            model: self.model,
            alpha: self.alpha,
            gamma: self.gamma,
            m0,
            m1,
        })
    }
}

/// Work and wall-clock accounting. One forward or backward transport sweep
/// counts as one PDE solve; an objective costs one, a gradient two, a
/// Gauss-Newton matvec two.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Counters {
    pub objective_evals: usize,
    pub gradient_evals: usize,
    pub matvecs: usize,
    pub pdes: usize,
    /// Seconds inside transport sweeps.
    pub t_pdes: f64,
    /// Seconds spent forming candidate iterates (line search and mixing
    /// trial construction), excluding the transport sweeps they trigger.
    pub t_q: f64,
    /// Seconds inside standalone objective evaluations.
    pub t_f: f64,
    /// Seconds inside mixing least-squares solves.
    pub t_ls: f64,
}

impl Counters {
    pub fn record_objective(&mut self) {
        self.objective_evals += 1;
        self.pdes += 1;
    }

    pub fn record_gradient(&mut self) {
        self.gradient_evals += 1;
        self.pdes += 2;
    }

    pub fn record_matvec(&mut self) {
        self.matvecs += 1;
        self.pdes += 2;
    }
}

/// Objective value split into its two terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveValue {
    pub total: f64,
    pub mismatch: f64,
    pub regularization: f64,
}

/// Sobolev penalty `alpha/2 * <L v, v>` evaluated in Fourier space, with the
/// same normalization as the quadrature inner product.
pub fn regularization_energy(v: &VectorField, alpha: f64, order: u32) -> f64 {
    let g = v.grid();
    let mut acc = 0.0;
    for comp in 0..2 {
        let spec = crate::grid::normalized_spectrum(v.component(comp));
        for i1 in 0..g.n1 {
            let k1 = crate::fft::mode(i1, g.n1) as f64;
            for i2 in 0..g.n2 {
                let k2 = crate::fft::mode(i2, g.n2) as f64;
                let mu = (k1 * k1 + k2 * k2).powi(order as i32);
                acc += mu * spec[i1 * g.n2 + i2].norm_sqr();
            }
        }
    }
    0.5 * alpha * crate::grid::TWO_PI * crate::grid::TWO_PI * acc
}

pub(crate) fn forward_trajectory(spec: &ProblemSpec, v: &VectorField) -> TimeSeriesField {
    match spec.model {
        ModelKind::Advection | ModelKind::Incompressible => {
            solve_state_advection(&spec.m0, v)
        }
        ModelKind::Continuity => solve_continuity_forward(&spec.m0, v),
    }
}

fn objective_from_final(spec: &ProblemSpec, v: &VectorField, m_end: &ScalarField) -> ObjectiveValue {
    let diff = ScalarField::sub(m_end, &spec.m1);
    let mismatch = 0.5 * diff.l2_norm().powi(2);
    let regularization = regularization_energy(v, spec.alpha, spec.model.reg_order());
    ObjectiveValue {
        total: mismatch + regularization,
        mismatch,
        regularization,
    }
}

/// One forward solve plus the closed-form penalty.
pub fn evaluate_objective(
    spec: &ProblemSpec,
    v: &VectorField,
    counters: &mut Counters,
) -> ObjectiveValue {
    let t0 = Instant::now();
    let m = forward_trajectory(spec, v);
    counters.t_pdes += t0.elapsed().as_secs_f64();
    let out = objective_from_final(spec, v, m.last());
    counters.record_objective();
    counters.t_f += t0.elapsed().as_secs_f64();
    out
}

/// Everything a gradient evaluation produces. The trajectories are kept for
/// callers that linearize around the current iterate.
pub struct GradientBundle {
    pub gradient: VectorField,
    pub objective: ObjectiveValue,
    pub state: TimeSeriesField,
    pub adjoint: TimeSeriesField,
}

/// Trapezoid-in-time accumulation of per-slice vector fields built by
/// `body(j)`.
pub(crate) fn trapezoid_sum(grid: GridSpec, mut body: impl FnMut(usize) -> VectorField) -> VectorField {
    let ht = grid.ht();
    let mut acc = VectorField::zeros(grid);
    for j in 0..=grid.nt {
        let w = if j == 0 || j == grid.nt { 0.5 * ht } else { ht };
        acc.add_scaled(&body(j), w);
    }
    acc
}

/// Forward and adjoint sweeps plus the gradient assembly.
pub fn evaluate_gradient_full(
    spec: &ProblemSpec,
    v: &VectorField,
    counters: &mut Counters,
) -> GradientBundle {
    let t0 = Instant::now();
    let state = forward_trajectory(spec, v);
    let adjoint = match spec.model {
        ModelKind::Advection | ModelKind::Incompressible => {
            solve_adjoint(state.last(), &spec.m1, v)
        }
        ModelKind::Continuity => {
            let terminal = ScalarField::sub(state.last(), &spec.m1);
            solve_advection_backward(&terminal, v)
        }
    };
    counters.t_pdes += t0.elapsed().as_secs_f64();

    let data_term = match spec.model {
        // Body -lambda * grad m per slice: steepest ascent of the mismatch
        // under this adjoint's terminal convention points along
        // +lambda*grad m, so the descent gradient carries the minus.
        ModelKind::Advection | ModelKind::Incompressible => trapezoid_sum(spec.grid, |j| {
            let grad_m = spectral_gradient(state.slice(j));
            let lam = adjoint.slice(j);
            let mut b = VectorField::from_components(
                ScalarField::mul(lam, grad_m.c1()),
                ScalarField::mul(lam, grad_m.c2()),
            )
            .expect("gradient body shares the grid");
            b.scale(-1.0);
            b
        }),
        // Body +pi * grad lambda per slice, same terminal convention.
        ModelKind::Continuity => trapezoid_sum(spec.grid, |j| {
            let grad_l = spectral_gradient(adjoint.slice(j));
            let pi = state.slice(j);
            VectorField::from_components(
                ScalarField::mul(pi, grad_l.c1()),
                ScalarField::mul(pi, grad_l.c2()),
            )
            .expect("gradient body shares the grid")
        }),
    };

    let mut gradient = apply_regularization(v, spec.alpha, spec.model.reg_order())
        .expect("penalty order is fixed by the model");
    gradient.add_scaled(&data_term, 1.0);
    if spec.model == ModelKind::Incompressible {
        gradient = leray_project(&gradient);
    }

    let objective = objective_from_final(spec, v, state.last());
    counters.record_gradient();
    GradientBundle {
        gradient,
        objective,
        state,
        adjoint,
    }
}

/// Gradient and objective only.
pub fn evaluate_gradient(
    spec: &ProblemSpec,
    v: &VectorField,
    counters: &mut Counters,
) -> (VectorField, ObjectiveValue) {
    let bundle = evaluate_gradient_full(spec, v, counters);
    (bundle.gradient, bundle.objective)
}
