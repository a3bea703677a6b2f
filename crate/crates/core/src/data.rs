//! Synthetic dataset builders: every experiment input is generated, nothing
//! is loaded from disk unless the caller wires up the field formats in
//! [`crate::io`].
//!
//! The rect pair is assembled in Fourier space from the analytic
//! coefficients of an interval indicator, truncated strictly below the grid
//! Nyquist frequency. That makes the fields at different resolutions
//! restrictions of one another to round-off, which is what the mesh
//! comparison experiments lean on. The sinusoidal and Gaussian pairs are
//! closed-form evaluations; random band-limited fields are seeded and fully
//! deterministic.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::grid::{GridSpec, ScalarField, VectorField, TWO_PI};

/// Which synthetic pair an experiment runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    /// Sharp rectangle indicator, translated and spatially scaled between
    /// the endpoints. Deliberately non-smooth before pre-smoothing.
    Rect,
    /// Low-frequency sinusoidal intensities, a shifted phase between the
    /// endpoints. Smooth at every stage.
    Sinusoidal,
    /// Two wrapped Gaussian probability densities of unit mass, offset
    /// centers and different widths. Built for the mass-transport model.
    GaussianDensities,
}

/// Truncated Fourier series of the indicator of `|x - center| <= half_width`
/// on the periodic interval, sampled at the `n` grid nodes. Modes strictly
/// below Nyquist carry their exact analytic coefficients; Nyquist itself is
/// left empty so restriction between resolutions is exact.
fn interval_series(n: usize, center: f64, half_width: f64) -> Vec<f64> {
    let mut vals = vec![half_width / std::f64::consts::PI; n];
    for k in 1..n / 2 {
        let kf = k as f64;
        let amp = 2.0 * (kf * half_width).sin() / (std::f64::consts::PI * kf);
        for (i, v) in vals.iter_mut().enumerate() {
            let x = TWO_PI * i as f64 / n as f64;
            *v += amp * (kf * (x - center)).cos();
        }
    }
    vals
}

/// Separable product `u(x1) * w(x2)` of two per-axis node samplings.
fn tensor_product(g: GridSpec, u: &[f64], w: &[f64]) -> ScalarField {
    let mut values = Vec::with_capacity(g.len());
    for &a in u {
        for &b in w {
            values.push(a * b);
        }
    }
    ScalarField::from_values(g, values).expect("tensor product fills the grid")
}

/// Rectangle pair: `m0` is the indicator of an axis-aligned rectangle
/// centered at `(pi, pi)` with half-widths `(0.9, 0.6)`; `m1` is the same
/// indicator translated by `(0.5, 0.3)` and scaled spatially by 1.15 about
/// its center. Both are truncated Fourier series, so they ring near the
/// edges until the solve-time smoothing takes over.
pub fn make_rect(g: GridSpec) -> (ScalarField, ScalarField) {
    let pi = std::f64::consts::PI;
    let u0 = interval_series(g.n1, pi, 0.9);
    let w0 = interval_series(g.n2, pi, 0.6);
    let u1 = interval_series(g.n1, pi + 0.5, 0.9 * 1.15);
    let w1 = interval_series(g.n2, pi + 0.3, 0.6 * 1.15);
    (tensor_product(g, &u0, &w0), tensor_product(g, &u1, &w1))
}

/// Smooth sinusoidal pair `1/2 (1 + sin x1 sin x2)` against the same field
/// with phases shifted by `(0.4, -0.3)`. Values stay in `[0, 1]` and the
/// spectral content never exceeds `|k| = 1` per axis.
pub fn make_sinusoidal(g: GridSpec) -> (ScalarField, ScalarField) {
    let m0 = ScalarField::from_fn(g, |x1, x2| 0.5 * (1.0 + x1.sin() * x2.sin()));
    let m1 = ScalarField::from_fn(g, |x1, x2| {
        0.5 * (1.0 + (x1 + 0.4).sin() * (x2 - 0.3).sin())
    });
    (m0, m1)
}

/// Periodized Gaussian bump: images summed over a 7x7 block of periodic
/// copies, which is far beyond machine precision for the widths used here.
fn wrapped_gaussian(g: GridSpec, c1: f64, c2: f64, width: f64) -> ScalarField {
    let inv = 1.0 / (2.0 * width * width);
    ScalarField::from_fn(g, |x1, x2| {
        let mut acc = 0.0;
        for j1 in -3..=3 {
            for j2 in -3..=3 {
                let d1 = x1 - c1 - TWO_PI * j1 as f64;
                let d2 = x2 - c2 - TWO_PI * j2 as f64;
                acc += (-(d1 * d1 + d2 * d2) * inv).exp();
            }
        }
        acc
    })
}

/// Divide by the quadrature mass so the discrete integral is exactly one.
fn normalize_mass(f: &ScalarField) -> ScalarField {
    let mass = f.mean() * TWO_PI * TWO_PI;
    let values = f.values().iter().map(|v| v / mass).collect();
    ScalarField::from_values(f.grid(), values).expect("normalization keeps the grid")
}

/// Two unit-mass probability densities for the mass-transport model:
/// wrapped Gaussians centered at `(pi - 0.6, pi - 0.4)` with width 0.5 and
/// at `(pi + 0.6, pi + 0.4)` with width 0.7.
pub fn make_gaussian_densities(g: GridSpec) -> (ScalarField, ScalarField) {
    let pi = std::f64::consts::PI;
    let p0 = normalize_mass(&wrapped_gaussian(g, pi - 0.6, pi - 0.4, 0.5));
    let p1 = normalize_mass(&wrapped_gaussian(g, pi + 0.6, pi + 0.4, 0.7));
    (p0, p1)
}

/// Endpoint pair for the requested dataset.
pub fn make_dataset(kind: DatasetKind, g: GridSpec) -> (ScalarField, ScalarField) {
    match kind {
        DatasetKind::Rect => make_rect(g),
        DatasetKind::Sinusoidal => make_sinusoidal(g),
        DatasetKind::GaussianDensities => make_gaussian_densities(g),
    }
}

/// Seeded random trigonometric polynomial with content up to `k_max` per
/// axis. Each retained mode gets a uniform amplitude in `[-1, 1]` damped by
/// `rolloff^(|k1| + |k2| - 1)` and a uniform phase, so `rolloff = 1`
/// weights all bands equally and smaller values concentrate energy at the
/// long wavelengths. Deterministic in `(seed, k_max, rolloff)` and
/// independent of the resolution ordering.
pub fn random_band_limited(g: GridSpec, seed: u64, k_max: i64, rolloff: f64) -> ScalarField {
    assert!(k_max >= 1, "a band-limited field needs at least one mode");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::new();
    // One representative per conjugate pair: k1 > 0, or k1 = 0 with k2 > 0.
    for k1 in 0..=k_max {
        let k2_lo = if k1 == 0 { 1 } else { -k_max };
        for k2 in k2_lo..=k_max {
            let amp: f64 = rng.gen_range(-1.0..1.0);
            let phase: f64 = rng.gen_range(0.0..TWO_PI);
            let damp = rolloff.powi((k1.abs() + k2.abs() - 1) as i32);
            terms.push((k1 as f64, k2 as f64, amp * damp, phase));
        }
    }
    ScalarField::from_fn(g, |x1, x2| {
        terms
            .iter()
            .map(|(k1, k2, a, p)| a * (k1 * x1 + k2 * x2 + p).cos())
            .sum()
    })
}

/// Two independent band-limited components drawn from the same stream.
pub fn random_velocity(g: GridSpec, seed: u64, k_max: i64, rolloff: f64) -> VectorField {
    let c1 = random_band_limited(g, seed, k_max, rolloff);
    let c2 = random_band_limited(g, seed.wrapping_add(0x9e37_79b9_7f4a_7c15), k_max, rolloff);
    VectorField::from_components(c1, c2).expect("components share the grid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{gaussian_smooth, restrict};

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n, n, 4).unwrap()
    }

    fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn rect_pair_differs_and_sits_near_the_unit_range() {
        let (m0, m1) = make_rect(grid(64));
        assert!(max_abs_diff(&m0, &m1) > 0.1);
        // Truncation ringing overshoots slightly; the bulk must still look
        // like an indicator.
        let max = m0.values().iter().cloned().fold(f64::MIN, f64::max);
        let min = m0.values().iter().cloned().fold(f64::MAX, f64::min);
        assert!(max > 0.9 && max < 1.3, "max {max}");
        assert!(min < 0.1 && min > -0.3, "min {min}");
    }

    #[test]
    fn rect_resolutions_are_restrictions_of_each_other() {
        let (f0, f1) = make_rect(grid(128));
        let (c0, c1) = make_rect(grid(64));
        let r0 = restrict(&f0, 64, 64).unwrap();
        let r1 = restrict(&f1, 64, 64).unwrap();
        assert!(max_abs_diff(&r0, &c0) < 1e-10, "{}", max_abs_diff(&r0, &c0));
        assert!(max_abs_diff(&r1, &c1) < 1e-10, "{}", max_abs_diff(&r1, &c1));
    }

    #[test]
    fn rect_smoothing_commutes_with_restriction_when_gamma_scales() {
        let (f0, _) = make_rect(grid(128));
        let (c0, _) = make_rect(grid(64));
        // Equal physical smoothing width: gamma doubles on the grid whose
        // spacing halves.
        let fine = gaussian_smooth(&f0, 2.0);
        let coarse = gaussian_smooth(&c0, 1.0);
        let r = restrict(&fine, 64, 64).unwrap();
        assert!(
            max_abs_diff(&r, &coarse) < 1e-10,
            "{}",
            max_abs_diff(&r, &coarse)
        );
    }

    #[test]
    fn sinusoidal_pair_is_bounded_and_band_limited() {
        let g = grid(32);
        let (m0, m1) = make_sinusoidal(g);
        for f in [&m0, &m1] {
            assert!(f.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let spec = crate::fft::forward(g.n1, g.n2, f.values());
            for i1 in 0..g.n1 {
                for i2 in 0..g.n2 {
                    let k1 = crate::fft::mode(i1, g.n1);
                    let k2 = crate::fft::mode(i2, g.n2);
                    if k1.abs() > 1 || k2.abs() > 1 {
                        let mag = spec[i1 * g.n2 + i2].norm() / g.len() as f64;
                        assert!(mag < 1e-12, "mode ({k1},{k2}) carries {mag}");
                    }
                }
            }
        }
    }

    #[test]
    fn gaussian_densities_are_positive_with_unit_mass() {
        for n in [64, 128] {
            let g = grid(n);
            let (p0, p1) = make_gaussian_densities(g);
            for p in [&p0, &p1] {
                assert!(p.values().iter().all(|v| *v > 0.0));
                let mass = p.mean() * TWO_PI * TWO_PI;
                assert!((mass - 1.0).abs() < 1e-12, "n {n}: mass {mass}");
            }
        }
    }

    #[test]
    fn random_fields_are_deterministic_and_band_limited() {
        let g = grid(32);
        let a = random_band_limited(g, 7, 2, 0.5);
        let b = random_band_limited(g, 7, 2, 0.5);
        assert_eq!(a.values(), b.values());
        let other = random_band_limited(g, 8, 2, 0.5);
        assert!(max_abs_diff(&a, &other) > 1e-8);
        let spec = crate::fft::forward(g.n1, g.n2, a.values());
        for i1 in 0..g.n1 {
            for i2 in 0..g.n2 {
                let k1 = crate::fft::mode(i1, g.n1);
                let k2 = crate::fft::mode(i2, g.n2);
                if k1.abs() > 2 || k2.abs() > 2 {
                    let mag = spec[i1 * g.n2 + i2].norm() / g.len() as f64;
                    assert!(mag < 1e-12, "mode ({k1},{k2}) carries {mag}");
                }
            }
        }
    }

    #[test]
    fn random_velocity_components_are_independent() {
        let g = grid(16);
        let v = random_velocity(g, 3, 2, 1.0);
        let diff = ScalarField::sub(v.c1(), v.c2());
        assert!(diff.values().iter().any(|d| d.abs() > 1e-8));
        let again = random_velocity(g, 3, 2, 1.0);
        assert_eq!(v.c1().values(), again.c1().values());
        assert_eq!(v.c2().values(), again.c2().values());
    }
}
