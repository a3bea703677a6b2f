//! Internal 2d FFT plumbing shared by the spectral operators.
//!
//! Fields are real; transforms run complex-to-complex on both axes, which
//! keeps the mode bookkeeping uniform at the cost of a redundant half
//! spectrum. Plans are cached per transform length behind a mutex; the plans
//! themselves are immutable and safe to share across solver threads.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

type Plan = Arc<dyn Fft<f64>>;

struct PlanPair {
    forward: Plan,
    inverse: Plan,
}

fn plan_cache() -> &'static Mutex<HashMap<usize, Arc<PlanPair>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<PlanPair>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn plans(n: usize) -> Arc<PlanPair> {
    let mut cache = plan_cache().lock().expect("fft plan cache poisoned");
    cache
        .entry(n)
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            Arc::new(PlanPair {
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
            })
        })
        .clone()
}

/// Signed integer frequency for FFT bin `i` of an `n`-point transform.
///
/// Bins map to `0, 1, ..., n/2, -(n/2 - 1), ..., -1`; for even `n` the shared
/// Nyquist bin is reported as `+n/2`.
pub fn mode(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Frequency used when building first-derivative symbols.
///
/// Identical to [`mode`] except that the unpaired Nyquist bin of an even
/// length transform maps to zero, the usual convention that keeps odd-order
/// spectral derivatives of real data real.
pub fn derivative_mode(i: usize, n: usize) -> f64 {
    if n % 2 == 0 && i == n / 2 {
        0.0
    } else {
        mode(i, n) as f64
    }
}

/// Unnormalized forward 2d DFT of a real field stored row-major as
/// `values[i1 * n2 + i2]`.
pub fn forward(n1: usize, n2: usize, values: &[f64]) -> Vec<Complex<f64>> {
    debug_assert_eq!(values.len(), n1 * n2);
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    transform_axes(n1, n2, &mut buf, true);
    buf
}

/// Inverse 2d DFT with `1/(n1*n2)` normalization, returning the real part.
///
/// Callers apply symmetric (Hermitian-preserving) multipliers between the two
/// transforms, so the imaginary residue is round-off and is discarded.
pub fn inverse_real(n1: usize, n2: usize, mut spectrum: Vec<Complex<f64>>) -> Vec<f64> {
    debug_assert_eq!(spectrum.len(), n1 * n2);
    transform_axes(n1, n2, &mut spectrum, false);
    let scale = 1.0 / (n1 * n2) as f64;
    spectrum.iter().map(|c| c.re * scale).collect()
}

fn transform_axes(n1: usize, n2: usize, buf: &mut [Complex<f64>], fwd: bool) {
    // Axis 2 is contiguous: one batched call over n1 rows.
    let pair2 = plans(n2);
    let plan2 = if fwd { &pair2.forward } else { &pair2.inverse };
    plan2.process(buf);

    // Axis 1 via transpose, batched transform, transpose back.
    let mut t = vec![Complex::new(0.0, 0.0); n1 * n2];
    for i1 in 0..n1 {
        for i2 in 0..n2 {
            t[i2 * n1 + i1] = buf[i1 * n2 + i2];
        }
    }
    let pair1 = plans(n1);
    let plan1 = if fwd { &pair1.forward } else { &pair1.inverse };
    plan1.process(&mut t);
    for i2 in 0..n2 {
        for i1 in 0..n1 {
            buf[i1 * n2 + i2] = t[i2 * n1 + i1];
        }
    }
}
