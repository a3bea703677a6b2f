//! Periodic cubic B-spline interpolation.
//!
//! The semi-Lagrangian transport solvers evaluate fields at arbitrary
//! off-grid points once per node per time step, so interpolation is split in
//! two stages: a per-field prefilter that converts nodal values into B-spline
//! coefficients, then cheap 4x4 tensor-product evaluations. The prefilter
//! inverts the circulant node-value map `f_j = (c_{j-1} + 4 c_j + c_{j+1})/6`
//! exactly in Fourier space (symbol `(4 + 2 cos(2 pi k / n))/6`, always
//! positive), which makes the interpolant reproduce grid values to round-off.

use crate::fft;
use crate::grid::{GridSpec, ScalarField, VectorField};

/// Prefiltered cubic B-spline interpolant of one scalar field.
#[derive(Clone, Debug)]
pub struct SplineInterp {
    grid: GridSpec,
    coeffs: Vec<f64>,
}

impl SplineInterp {
    pub fn new(f: &ScalarField) -> Self {
        let g = f.grid();
        let mut spec = fft::forward(g.n1, g.n2, f.values());
        let b1 = axis_symbol(g.n1);
        let b2 = axis_symbol(g.n2);
        for i1 in 0..g.n1 {
            let w1 = b1[i1];
            for i2 in 0..g.n2 {
                spec[i1 * g.n2 + i2] *= w1 * b2[i2];
            }
        }
        Self {
            grid: g,
            coeffs: fft::inverse_real(g.n1, g.n2, spec),
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Interpolant value at `(x1, x2)`; coordinates may be any finite reals
    /// and are wrapped onto the torus.
    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let g = &self.grid;
        let u1 = (x1 / g.h1()).rem_euclid(g.n1 as f64);
        let u2 = (x2 / g.h2()).rem_euclid(g.n2 as f64);
        let i1 = u1.floor() as usize;
        let i2 = u2.floor() as usize;
        let w1 = bspline_weights(u1 - i1 as f64);
        let w2 = bspline_weights(u2 - i2 as f64);

        let n1 = g.n1;
        let n2 = g.n2;
        // Tap rows/cols i-1 ... i+2, wrapped. floor() of a value in [0, n)
        // gives i in [0, n-1], so i + n - 1 stays in range for the modulo.
        let r = [
            (i1 + n1 - 1) % n1,
            i1 % n1,
            (i1 + 1) % n1,
            (i1 + 2) % n1,
        ];
        let c = [
            (i2 + n2 - 1) % n2,
            i2 % n2,
            (i2 + 1) % n2,
            (i2 + 2) % n2,
        ];
        let mut acc = 0.0;
        for (wi, &row) in w1.iter().zip(&r) {
            let base = row * n2;
            let mut line = 0.0;
            for (wj, &col) in w2.iter().zip(&c) {
                line += wj * self.coeffs[base + col];
            }
            acc += wi * line;
        }
        acc
    }

    /// Evaluate at a list of points, reusing the prefiltered coefficients.
    pub fn eval_many(&self, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x1.len(), x2.len());
        x1.iter()
            .zip(x2)
            .map(|(&a, &b)| self.eval(a, b))
            .collect()
    }
}

/// One-shot interpolation of `f` at a point list.
pub fn interpolate(f: &ScalarField, points: &[(f64, f64)]) -> Vec<f64> {
    let sp = SplineInterp::new(f);
    points.iter().map(|&(a, b)| sp.eval(a, b)).collect()
}

/// Paired interpolants for the two components of a velocity field.
#[derive(Clone, Debug)]
pub struct VectorInterp {
    pub c1: SplineInterp,
    pub c2: SplineInterp,
}

impl VectorInterp {
    pub fn new(v: &VectorField) -> Self {
        Self {
            c1: SplineInterp::new(v.c1()),
            c2: SplineInterp::new(v.c2()),
        }
    }

    pub fn eval(&self, x1: f64, x2: f64) -> (f64, f64) {
        (self.c1.eval(x1, x2), self.c2.eval(x1, x2))
    }
}

fn axis_symbol(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            6.0 / (4.0 + 2.0 * theta.cos())
        })
        .collect()
}

/// Basis weights for taps `i-1, i, i+1, i+2` at fractional offset `t` in `[0,1)`.
fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    let omt = 1.0 - t;
    [
        omt * omt * omt / 6.0,
        (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0,
        (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0,
        t3 / 6.0,
    ]
}
