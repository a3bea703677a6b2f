//! Periodic grid, field containers, and Fourier collocation operators.
//!
//! The domain is the torus `[0, 2*pi)^2` sampled on an `n1 x n2` uniform grid
//! with nodes `x_l = 2*pi*l/n`. Scalar fields store nodal values row-major
//! (`i1 * n2 + i2`), matching the on-disk layout used by [`crate::io`].
//! Differential operators act in Fourier space with signed integer
//! frequencies; the unpaired Nyquist bin of an even transform contributes
//! zero to first derivatives so that derivatives of real data stay real.
//!
//! Discrete inner products carry the quadrature weight `h1*h2`, so `inner`
//! and `l2_norm` approximate their continuum counterparts and Parseval
//! identities hold exactly in tests.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Discretization descriptor: spatial dims plus the number of time cells
/// used by the transport solvers on this grid (`h_t = 1/nt`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub n1: usize,
    pub n2: usize,
    pub nt: usize,
}

impl GridSpec {
    pub fn new(n1: usize, n2: usize, nt: usize) -> Result<Self> {
        for (name, n) in [("n1", n1), ("n2", n2)] {
            if n < 4 || n % 2 != 0 {
                return Err(Error::InvalidGrid(format!(
                    "{name} = {n}; spatial dims must be even and at least 4"
                )));
            }
        }
        if nt == 0 {
            return Err(Error::InvalidGrid("nt must be at least 1".into()));
        }
        Ok(Self { n1, n2, nt })
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h1(&self) -> f64 {
        TWO_PI / self.n1 as f64
    }

    pub fn h2(&self) -> f64 {
        TWO_PI / self.n2 as f64
    }

    pub fn ht(&self) -> f64 {
        1.0 / self.nt as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.h1() * self.h2()
    }

    pub fn idx(&self, i1: usize, i2: usize) -> usize {
        i1 * self.n2 + i2
    }

    pub fn node(&self, i1: usize, i2: usize) -> (f64, f64) {
        (i1 as f64 * self.h1(), i2 as f64 * self.h2())
    }

    /// True when spatial dimensions agree (time resolution may differ).
    pub fn same_shape(&self, other: &GridSpec) -> bool {
        self.n1 == other.n1 && self.n2 == other.n2
    }
}

/// Real scalar field on a [`GridSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "value buffer has {} entries, grid needs {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: GridSpec, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                let (x1, x2) = grid.node(i1, i2);
                values.push(f(x1, x2));
            }
        }
        Self { grid, values }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.values[self.grid.idx(i1, i2)]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn inf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Quadrature `L^2` norm, `sqrt(h1*h2*sum f^2)`.
    pub fn l2_norm(&self) -> f64 {
        inner(self, self).sqrt()
    }

    /// Quadrature integral `h1*h2*sum f`.
    pub fn integral(&self) -> f64 {
        self.grid.cell_area() * self.values.iter().sum::<f64>()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ScalarField, s: f64) {
        debug_assert!(self.grid.same_shape(&other.grid));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn sub(a: &ScalarField, b: &ScalarField) -> ScalarField {
        debug_assert!(a.grid.same_shape(&b.grid));
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        ScalarField {
            grid: a.grid,
            values,
        }
    }

    /// Pointwise product.
    pub fn mul(a: &ScalarField, b: &ScalarField) -> ScalarField {
        debug_assert!(a.grid.same_shape(&b.grid));
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x * y).collect();
        ScalarField {
            grid: a.grid,
            values,
        }
    }
}

/// Quadrature inner product `h1*h2*sum a*b`.
pub fn inner(a: &ScalarField, b: &ScalarField) -> f64 {
    debug_assert!(a.grid.same_shape(&b.grid));
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    a.grid.cell_area() * dot
}

/// Two-component velocity field; both components share one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    components: [ScalarField; 2],
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            components: [ScalarField::zeros(grid), ScalarField::zeros(grid)],
        }
    }

    pub fn from_components(c1: ScalarField, c2: ScalarField) -> Result<Self> {
        if c1.grid() != c2.grid() {
            return Err(Error::GridMismatch(
                "vector field components on different grids".into(),
            ));
        }
        Ok(Self {
            components: [c1, c2],
        })
    }

    pub fn from_fn(
        grid: GridSpec,
        f1: impl FnMut(f64, f64) -> f64,
        f2: impl FnMut(f64, f64) -> f64,
    ) -> Self {
        Self {
            components: [ScalarField::from_fn(grid, f1), ScalarField::from_fn(grid, f2)],
        }
    }

    pub fn grid(&self) -> GridSpec {
        self.components[0].grid()
    }

    pub fn c1(&self) -> &ScalarField {
        &self.components[0]
    }

    pub fn c2(&self) -> &ScalarField {
        &self.components[1]
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut ScalarField {
        &mut self.components[i]
    }

    pub fn inf_norm(&self) -> f64 {
        self.components[0].inf_norm().max(self.components[1].inf_norm())
    }

    pub fn l2_norm(&self) -> f64 {
        inner_vec(self, self).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.components[0].scale(s);
        self.components[1].scale(s);
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &VectorField, s: f64) {
        self.components[0].add_scaled(&other.components[0], s);
        self.components[1].add_scaled(&other.components[1], s);
    }

    pub fn sub(a: &VectorField, b: &VectorField) -> VectorField {
        VectorField {
            components: [
                ScalarField::sub(&a.components[0], &b.components[0]),
                ScalarField::sub(&a.components[1], &b.components[1]),
            ],
        }
    }

    /// Both components concatenated, `[c1..., c2...]`; the layout used when
    /// fields enter dense least-squares or Krylov routines.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.grid().len());
        out.extend_from_slice(self.components[0].values());
        out.extend_from_slice(self.components[1].values());
        out
    }

    pub fn from_flat(grid: GridSpec, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 * grid.len() {
            return Err(Error::InvalidGrid(format!(
                "flat buffer has {} entries, vector field needs {}",
                flat.len(),
                2 * grid.len()
            )));
        }
        let (a, b) = flat.split_at(grid.len());
        Ok(Self {
            components: [
                ScalarField::from_values(grid, a.to_vec())?,
                ScalarField::from_values(grid, b.to_vec())?,
            ],
        })
    }
}

/// Quadrature inner product over both components.
pub fn inner_vec(a: &VectorField, b: &VectorField) -> f64 {
    inner(a.c1(), b.c1()) + inner(a.c2(), b.c2())
}

/// Diagonal Fourier-space operator with real per-mode coefficients, stored in
/// FFT bin order.
#[derive(Clone, Debug)]
pub struct SpectralMultiplier {
    grid: GridSpec,
    mu: Vec<f64>,
}

impl SpectralMultiplier {
    fn build(grid: GridSpec, mut f: impl FnMut(i64, i64) -> f64) -> Self {
        let mut mu = Vec::with_capacity(grid.len());
        for i1 in 0..grid.n1 {
            for i2 in 0..grid.n2 {
                mu.push(f(fft::mode(i1, grid.n1), fft::mode(i2, grid.n2)));
            }
        }
        Self { grid, mu }
    }

    /// Sobolev penalty symbol `|k|^(2*order)`: biharmonic for `order = 2`,
    /// triharmonic for `order = 3`.
    pub fn regularization(grid: GridSpec, order: u32) -> Result<Self> {
        check_order(order)?;
        Ok(Self::build(grid, |k1, k2| {
            ((k1 * k1 + k2 * k2) as f64).powi(order as i32)
        }))
    }

    /// Inverse of `alpha * |k|^(2*order)` with the zero mode (the kernel of
    /// the penalty) treated as coefficient 1 before inversion, so constants
    /// pass through scaled by `1/alpha`.
    pub fn inverse_regularization(grid: GridSpec, alpha: f64, order: u32) -> Result<Self> {
        check_order(order)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha}; must be positive"
            )));
        }
        Ok(Self::build(grid, |k1, k2| {
            let mu = ((k1 * k1 + k2 * k2) as f64).powi(order as i32);
            1.0 / (alpha * mu.max(1.0))
        }))
    }

    /// Symmetric square root of [`Self::inverse_regularization`]: applying
    /// it twice reproduces the full inverse, which is what lets the Newton
    /// preconditioner split the penalty around the data term symmetrically.
    pub fn half_inverse_regularization(grid: GridSpec, alpha: f64, order: u32) -> Result<Self> {
        check_order(order)?;
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {alpha}; must be positive"
            )));
        }
        Ok(Self::build(grid, |k1, k2| {
            let mu = ((k1 * k1 + k2 * k2) as f64).powi(order as i32);
            1.0 / (alpha * mu.max(1.0)).sqrt()
        }))
    }

    /// Gaussian low-pass `exp(-(sigma1^2 k1^2 + sigma2^2 k2^2)/2)` with
    /// per-axis widths `sigma_i = gamma * h_i`.
    pub fn gaussian(grid: GridSpec, gamma: f64) -> Self {
        let s1 = gamma * grid.h1();
        let s2 = gamma * grid.h2();
        Self::build(grid, |k1, k2| {
            let q = s1 * s1 * (k1 * k1) as f64 + s2 * s2 * (k2 * k2) as f64;
            (-0.5 * q).exp()
        })
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    /// Coefficient for signed mode `(k1, k2)`; test hook.
    pub fn coefficient(&self, k1: i64, k2: i64) -> f64 {
        let i1 = k1.rem_euclid(self.grid.n1 as i64) as usize;
        let i2 = k2.rem_euclid(self.grid.n2 as i64) as usize;
        self.mu[i1 * self.grid.n2 + i2]
    }

    pub fn apply(&self, f: &ScalarField) -> ScalarField {
        debug_assert!(self.grid.same_shape(&f.grid()));
        let g = f.grid();
        let mut spec = fft::forward(g.n1, g.n2, f.values());
        for (c, m) in spec.iter_mut().zip(&self.mu) {
            *c *= *m;
        }
        ScalarField {
            grid: g,
            values: fft::inverse_real(g.n1, g.n2, spec),
        }
    }

    pub fn apply_vector(&self, v: &VectorField) -> VectorField {
        VectorField {
            components: [self.apply(v.c1()), self.apply(v.c2())],
        }
    }
}

fn check_order(order: u32) -> Result<()> {
    if order == 2 || order == 3 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "regularization order {order}; supported orders are 2 and 3"
        )))
    }
}

/// Spectral gradient `(d/dx1 f, d/dx2 f)`.
pub fn spectral_gradient(f: &ScalarField) -> VectorField {
    let g = f.grid();
    let spec = fft::forward(g.n1, g.n2, f.values());
    let mut s1 = spec.clone();
    let mut s2 = spec;
    for i1 in 0..g.n1 {
        let k1 = fft::derivative_mode(i1, g.n1);
        for i2 in 0..g.n2 {
            let k2 = fft::derivative_mode(i2, g.n2);
            let idx = i1 * g.n2 + i2;
            s1[idx] = mul_ik(s1[idx], k1);
            s2[idx] = mul_ik(s2[idx], k2);
        }
    }
    VectorField {
        components: [
            ScalarField {
                grid: g,
                values: fft::inverse_real(g.n1, g.n2, s1),
            },
            ScalarField {
                grid: g,
                values: fft::inverse_real(g.n1, g.n2, s2),
            },
        ],
    }
}

/// Spectral divergence `d/dx1 u1 + d/dx2 u2`.
pub fn spectral_divergence(u: &VectorField) -> ScalarField {
    let g = u.grid();
    let s1 = fft::forward(g.n1, g.n2, u.c1().values());
    let s2 = fft::forward(g.n1, g.n2, u.c2().values());
    let mut out = vec![Complex::new(0.0, 0.0); g.len()];
    for i1 in 0..g.n1 {
        let k1 = fft::derivative_mode(i1, g.n1);
        for i2 in 0..g.n2 {
            let k2 = fft::derivative_mode(i2, g.n2);
            let idx = i1 * g.n2 + i2;
            out[idx] = mul_ik(s1[idx], k1) + mul_ik(s2[idx], k2);
        }
    }
    ScalarField {
        grid: g,
        values: fft::inverse_real(g.n1, g.n2, out),
    }
}

fn mul_ik(c: Complex<f64>, k: f64) -> Complex<f64> {
    Complex::new(-k * c.im, k * c.re)
}

/// Forward penalty operator `alpha * |k|^(2*order)` applied to a velocity.
pub fn apply_regularization(v: &VectorField, alpha: f64, order: u32) -> Result<VectorField> {
    let mult = SpectralMultiplier::regularization(v.grid(), order)?;
    let mut out = mult.apply_vector(v);
    out.scale(alpha);
    Ok(out)
}

/// Smoothing inverse of the penalty; see
/// [`SpectralMultiplier::inverse_regularization`] for the kernel convention.
pub fn apply_inverse_regularization(v: &VectorField, alpha: f64, order: u32) -> Result<VectorField> {
    let mult = SpectralMultiplier::inverse_regularization(v.grid(), alpha, order)?;
    Ok(mult.apply_vector(v))
}

/// Half-power smoothing inverse; applied twice it equals
/// [`apply_inverse_regularization`].
pub fn apply_half_inverse_regularization(
    v: &VectorField,
    alpha: f64,
    order: u32,
) -> Result<VectorField> {
    let mult = SpectralMultiplier::half_inverse_regularization(v.grid(), alpha, order)?;
    Ok(mult.apply_vector(v))
}

/// Gaussian smoothing with grid-scaled width `gamma`; `gamma = 0` is the
/// identity and returns the input unchanged without a transform round trip.
pub fn gaussian_smooth(f: &ScalarField, gamma: f64) -> ScalarField {
    if gamma == 0.0 {
        return f.clone();
    }
    SpectralMultiplier::gaussian(f.grid(), gamma).apply(f)
}

/// Leray projection onto divergence-free fields:
/// `u_hat <- (I - k k^T / |k|^2) u_hat` for every nonzero mode.
///
/// Wavenumbers here are the derivative modes, with the Nyquist column
/// zeroed, so the result is the orthogonal projector onto the kernel of
/// [`spectral_divergence`]; projected fields have exactly zero discrete
/// divergence instead of leftover Nyquist residue.
pub fn leray_project(u: &VectorField) -> VectorField {
    let g = u.grid();
    let mut s1 = fft::forward(g.n1, g.n2, u.c1().values());
    let mut s2 = fft::forward(g.n1, g.n2, u.c2().values());
    for i1 in 0..g.n1 {
        let k1 = fft::derivative_mode(i1, g.n1);
        for i2 in 0..g.n2 {
            let k2 = fft::derivative_mode(i2, g.n2);
            if k1 == 0.0 && k2 == 0.0 {
                continue;
            }
            let idx = i1 * g.n2 + i2;
            let proj = (k1 * s1[idx] + k2 * s2[idx]) / (k1 * k1 + k2 * k2);
            s1[idx] -= k1 * proj;
            s2[idx] -= k2 * proj;
        }
    }
    VectorField {
        components: [
            ScalarField {
                grid: g,
                values: fft::inverse_real(g.n1, g.n2, s1),
            },
            ScalarField {
                grid: g,
                values: fft::inverse_real(g.n1, g.n2, s2),
            },
        ],
    }
}

/// Fourier truncation onto a half-resolution grid. Modes at or above the
/// coarse Nyquist frequency are discarded; retained coefficients keep their
/// amplitude.
pub fn restrict(f: &ScalarField, n1: usize, n2: usize) -> Result<ScalarField> {
    let g = f.grid();
    if g.n1 != 2 * n1 || g.n2 != 2 * n2 {
        return Err(Error::GridMismatch(format!(
            "restrict from {}x{} to {n1}x{n2}: target must be exactly half resolution",
            g.n1, g.n2
        )));
    }
    let coarse = GridSpec::new(n1, n2, g.nt)?;
    let spec = fft::forward(g.n1, g.n2, f.values());
    let mut out = vec![Complex::new(0.0, 0.0); coarse.len()];
    let scale = (n1 * n2) as f64 / (g.n1 * g.n2) as f64;
    for i1 in 0..n1 {
        let k1 = fft::mode(i1, n1);
        if k1.unsigned_abs() as usize >= n1 / 2 {
            continue;
        }
        for i2 in 0..n2 {
            let k2 = fft::mode(i2, n2);
            if k2.unsigned_abs() as usize >= n2 / 2 {
                continue;
            }
            let f1 = k1.rem_euclid(g.n1 as i64) as usize;
            let f2 = k2.rem_euclid(g.n2 as i64) as usize;
            out[i1 * n2 + i2] = spec[f1 * g.n2 + f2] * scale;
        }
    }
    Ok(ScalarField {
        grid: coarse,
        values: fft::inverse_real(n1, n2, out),
    })
}

/// Zero-padding adjoint of [`restrict`]: embed the coarse spectrum in a
/// double-resolution grid. The coarse Nyquist row and column are dropped, so
/// `restrict(prolong(f)) == f` for fields band-limited below that frequency.
pub fn prolong(f: &ScalarField, n1: usize, n2: usize) -> Result<ScalarField> {
    let g = f.grid();
    if n1 != 2 * g.n1 || n2 != 2 * g.n2 {
        return Err(Error::GridMismatch(format!(
            "prolong from {}x{} to {n1}x{n2}: target must be exactly double resolution",
            g.n1, g.n2
        )));
    }
    let fine = GridSpec::new(n1, n2, g.nt)?;
    let spec = fft::forward(g.n1, g.n2, f.values());
    let mut out = vec![Complex::new(0.0, 0.0); fine.len()];
    let scale = (n1 * n2) as f64 / (g.n1 * g.n2) as f64;
    for i1 in 0..g.n1 {
        let k1 = fft::mode(i1, g.n1);
        if k1.unsigned_abs() as usize >= g.n1 / 2 {
            continue;
        }
        for i2 in 0..g.n2 {
            let k2 = fft::mode(i2, g.n2);
            if k2.unsigned_abs() as usize >= g.n2 / 2 {
                continue;
            }
            let f1 = k1.rem_euclid(n1 as i64) as usize;
            let f2 = k2.rem_euclid(n2 as i64) as usize;
            out[f1 * n2 + f2] = spec[i1 * g.n2 + i2] * scale;
        }
    }
    Ok(ScalarField {
        grid: fine,
        values: fft::inverse_real(n1, n2, out),
    })
}

pub fn restrict_vector(v: &VectorField, n1: usize, n2: usize) -> Result<VectorField> {
    VectorField::from_components(restrict(v.c1(), n1, n2)?, restrict(v.c2(), n1, n2)?)
}

pub fn prolong_vector(v: &VectorField, n1: usize, n2: usize) -> Result<VectorField> {
    VectorField::from_components(prolong(v.c1(), n1, n2)?, prolong(v.c2(), n1, n2)?)
}

/// Per-mode normalized Fourier coefficients of `f` (DFT divided by `n1*n2`),
/// used by the penalty-energy evaluation.
pub(crate) fn normalized_spectrum(f: &ScalarField) -> Vec<Complex<f64>> {
    let g = f.grid();
    let mut spec = fft::forward(g.n1, g.n2, f.values());
    let scale = 1.0 / g.len() as f64;
    for c in &mut spec {
        *c *= scale;
    }
    spec
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 4).unwrap()
    }

    fn random_field(g: GridSpec, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ScalarField::from_values(g, values).unwrap()
    }

    fn max_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        ScalarField::sub(a, b).inf_norm()
    }

    #[test]
    fn grid_rejects_odd_small_or_zero_time_dims() {
        assert!(GridSpec::new(7, 8, 4).is_err());
        assert!(GridSpec::new(8, 2, 4).is_err());
        assert!(GridSpec::new(8, 8, 0).is_err());
        assert!(GridSpec::new(4, 4, 1).is_ok());
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let f = ScalarField::from_fn(grid(16), |_, _| 3.25);
        let gr = spectral_gradient(&f);
        assert!(gr.inf_norm() < 1e-13);
    }

    #[test]
    fn gradient_matches_analytic_derivatives() {
        let g = grid(32);
        let f = ScalarField::from_fn(g, |x1, x2| (3.0 * x1).sin() * (2.0 * x2).cos());
        let gr = spectral_gradient(&f);
        let d1 = ScalarField::from_fn(g, |x1, x2| 3.0 * (3.0 * x1).cos() * (2.0 * x2).cos());
        let d2 = ScalarField::from_fn(g, |x1, x2| -2.0 * (3.0 * x1).sin() * (2.0 * x2).sin());
        assert!(max_diff(gr.c1(), &d1) < 1e-12);
        assert!(max_diff(gr.c2(), &d2) < 1e-12);
    }

    #[test]
    fn divergence_matches_analytic_value() {
        let g = grid(32);
        let u = VectorField::from_fn(g, |x1, _| x1.sin(), |_, _| 0.0);
        let div = spectral_divergence(&u);
        let expect = ScalarField::from_fn(g, |x1, _| x1.cos());
        assert!(max_diff(&div, &expect) < 1e-12);

        let c = VectorField::from_fn(g, |_, _| 1.0, |_, _| -2.0);
        assert!(spectral_divergence(&c).inf_norm() < 1e-13);
    }

    #[test]
    fn divergence_of_gradient_is_laplacian() {
        let g = grid(32);
        let f = ScalarField::from_fn(g, |x1, x2| x1.sin() + (2.0 * x2).sin());
        let lap = spectral_divergence(&spectral_gradient(&f));
        let expect = ScalarField::from_fn(g, |x1, x2| -x1.sin() - 4.0 * (2.0 * x2).sin());
        assert!(max_diff(&lap, &expect) < 1e-12);
    }

    #[test]
    fn gradient_divergence_duality_on_random_fields() {
        // <grad f, u> = -<f, div u> is integration by parts on the torus and
        // holds to round-off for the collocation operators.
        let g = grid(24);
        for seed in 0..5 {
            let f = random_field(g, seed);
            let u = VectorField::from_components(
                random_field(g, 100 + seed),
                random_field(g, 200 + seed),
            )
            .unwrap();
            let lhs = inner_vec(&spectral_gradient(&f), &u);
            let rhs = -inner(&f, &spectral_divergence(&u));
            assert!(
                (lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()),
                "duality broke: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn regularization_symbol_values() {
        let g = grid(64);
        let m2 = SpectralMultiplier::regularization(g, 2).unwrap();
        assert_eq!(m2.coefficient(1, 0), 1.0);
        assert_eq!(m2.coefficient(3, 4), 625.0);
        let m3 = SpectralMultiplier::regularization(g, 3).unwrap();
        assert_eq!(m3.coefficient(1, 1), 8.0);
        assert!(SpectralMultiplier::regularization(g, 1).is_err());
        assert!(SpectralMultiplier::regularization(g, 4).is_err());
    }

    #[test]
    fn inverse_regularization_trivial_cases() {
        let g = grid(16);
        let zero = VectorField::zeros(g);
        assert_eq!(apply_inverse_regularization(&zero, 0.5, 2).unwrap(), zero);

        // Constants sit in the penalty kernel; with alpha = 1 they pass through.
        let c = VectorField::from_fn(g, |_, _| 4.0, |_, _| -1.5);
        let out = apply_inverse_regularization(&c, 1.0, 2).unwrap();
        assert!(VectorField::sub(&out, &c).inf_norm() < 1e-12);

        // A single mode is scaled by 1/(alpha*|k|^4).
        let v = VectorField::from_fn(g, |x1, _| (2.0 * x1).sin(), |_, _| 0.0);
        let out = apply_inverse_regularization(&v, 0.1, 2).unwrap();
        let expect_scale = 1.0 / (0.1 * 16.0);
        let mut expect = v.clone();
        expect.scale(expect_scale);
        assert!(VectorField::sub(&out, &expect).inf_norm() < 1e-12);
    }

    #[test]
    fn half_inverse_squares_to_the_full_inverse() {
        let g = grid(16);
        let v = VectorField::from_fn(
            g,
            |x1, x2| x1.sin() * (2.0 * x2).cos() + 0.3,
            |x1, x2| (3.0 * x1).cos() * x2.sin(),
        );
        for order in [2u32, 3] {
            let twice = apply_half_inverse_regularization(
                &apply_half_inverse_regularization(&v, 0.07, order).unwrap(),
                0.07,
                order,
            )
            .unwrap();
            let full = apply_inverse_regularization(&v, 0.07, order).unwrap();
            assert!(
                VectorField::sub(&twice, &full).inf_norm() < 1e-12,
                "order {order}"
            );
        }
    }

    #[test]
    fn inverse_undoes_forward_on_zero_mean_fields() {
        let g = grid(24);
        let mut f1 = random_field(g, 7);
        let m = f1.mean();
        for v in f1.values_mut() {
            *v -= m;
        }
        let mut f2 = random_field(g, 8);
        let m = f2.mean();
        for v in f2.values_mut() {
            *v -= m;
        }
        let v = VectorField::from_components(f1, f2).unwrap();
        for order in [2u32, 3] {
            let fwd = apply_regularization(&v, 2.5, order).unwrap();
            let back = apply_inverse_regularization(&fwd, 2.5, order).unwrap();
            assert!(
                VectorField::sub(&back, &v).inf_norm() < 1e-9,
                "order {order} roundtrip"
            );
        }
    }

    #[test]
    fn leray_keeps_divergence_free_fields() {
        let g = grid(32);
        // Perpendicular gradient of a stream function is divergence free.
        let psi = ScalarField::from_fn(g, |x1, x2| (2.0 * x1).sin() * x2.cos());
        let gr = spectral_gradient(&psi);
        let u = VectorField::from_components(gr.c2().clone(), {
            let mut c = gr.c1().clone();
            c.scale(-1.0);
            c
        })
        .unwrap();
        let proj = leray_project(&u);
        assert!(VectorField::sub(&proj, &u).inf_norm() < 1e-12);
    }

    #[test]
    fn leray_annihilates_gradients_and_is_idempotent() {
        let g = grid(32);
        let f = random_field(g, 11);
        let mut zero_mean = f.clone();
        let m = zero_mean.mean();
        for v in zero_mean.values_mut() {
            *v -= m;
        }
        let gr = spectral_gradient(&zero_mean);
        assert!(leray_project(&gr).inf_norm() < 1e-10);

        let u = VectorField::from_components(random_field(g, 21), random_field(g, 22)).unwrap();
        let once = leray_project(&u);
        let twice = leray_project(&once);
        assert!(VectorField::sub(&twice, &once).inf_norm() < 1e-12);
        assert!(spectral_divergence(&once).inf_norm() < 1e-11);
    }

    #[test]
    fn leray_is_self_adjoint() {
        let g = grid(16);
        let u = VectorField::from_components(random_field(g, 31), random_field(g, 32)).unwrap();
        let w = VectorField::from_components(random_field(g, 33), random_field(g, 34)).unwrap();
        let lhs = inner_vec(&leray_project(&u), &w);
        let rhs = inner_vec(&u, &leray_project(&w));
        assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
    }

    #[test]
    fn smoothing_identity_and_constants() {
        let g = grid(32);
        let f = random_field(g, 41);
        // gamma = 0 must be bit-identical, not just close.
        assert_eq!(gaussian_smooth(&f, 0.0), f);

        let c = ScalarField::from_fn(g, |_, _| 2.5);
        assert!(max_diff(&gaussian_smooth(&c, 3.0), &c) < 1e-13);
    }

    #[test]
    fn smoothing_scales_single_mode_by_symbol() {
        let g = GridSpec::new(64, 64, 4).unwrap();
        let f = ScalarField::from_fn(g, |x1, _| x1.sin());
        let out = gaussian_smooth(&f, 1.0);
        let sigma = g.h1();
        let expect_amp = (-0.5 * sigma * sigma).exp();
        let expect = ScalarField::from_fn(g, |x1, _| expect_amp * x1.sin());
        assert!(max_diff(&out, &expect) < 1e-12);
    }

    #[test]
    fn smoothing_never_amplifies_modes() {
        let g = grid(16);
        let f = random_field(g, 51);
        let before = normalized_spectrum(&f);
        let after = normalized_spectrum(&gaussian_smooth(&f, 2.0));
        for (a, b) in after.iter().zip(&before) {
            assert!(a.norm() <= b.norm() + 1e-13);
        }
    }

    #[test]
    fn restrict_prolong_roundtrip_on_band_limited_field() {
        let g = GridSpec::new(32, 32, 4).unwrap();
        let f = ScalarField::from_fn(g, |x1, x2| {
            1.0 + (3.0 * x1).sin() * x2.cos() + (7.0 * x2).cos()
        });
        let up = prolong(&f, 64, 64).unwrap();
        let down = restrict(&up, 32, 32).unwrap();
        assert!(max_diff(&down, &f) < 1e-12);

        // Prolongation reproduces the trigonometric interpolant exactly.
        let gf = GridSpec::new(64, 64, 4).unwrap();
        let exact = ScalarField::from_fn(gf, |x1, x2| {
            1.0 + (3.0 * x1).sin() * x2.cos() + (7.0 * x2).cos()
        });
        assert!(max_diff(&up, &exact) < 1e-12);
    }

    #[test]
    fn restrict_drops_modes_at_and_above_coarse_nyquist() {
        let g = GridSpec::new(32, 32, 4).unwrap();
        let f = ScalarField::from_fn(g, |x1, _| (9.0 * x1).sin());
        let down = restrict(&f, 16, 16).unwrap();
        assert!(down.inf_norm() < 1e-12);

        let c = ScalarField::from_fn(g, |_, _| 1.75);
        let down = restrict(&c, 16, 16).unwrap();
        assert!(max_diff(&down, &ScalarField::from_fn(down.grid(), |_, _| 1.75)) < 1e-13);
    }

    #[test]
    fn restrict_rejects_non_halving_dims() {
        let g = GridSpec::new(32, 32, 4).unwrap();
        let f = ScalarField::zeros(g);
        assert!(restrict(&f, 8, 8).is_err());
        assert!(prolong(&f, 48, 48).is_err());
    }

    #[test]
    fn parseval_normalization_is_consistent() {
        let g = grid(16);
        let f = random_field(g, 61);
        let spec = normalized_spectrum(&f);
        let spectral_energy: f64 = spec.iter().map(|c| c.norm_sqr()).sum();
        let quad = inner(&f, &f);
        assert!((quad - TWO_PI * TWO_PI * spectral_energy).abs() < 1e-10 * quad.max(1.0));
    }
}
