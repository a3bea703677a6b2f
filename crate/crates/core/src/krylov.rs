//! Matrix-free inner solvers for the Newton step: preconditioned conjugate
//! gradients for the symmetric preconditioner choices and a plain (no
//! restart) GMRES for the left-preconditioned unsymmetric composition.
//! Operators and preconditioners are closures over velocity fields; all
//! inner products use the grid quadrature, which is the product the Hessian
//! is self-adjoint under.

use crate::grid::{inner_vec, VectorField};

/// Outcome of an inner solve. `residual_history` holds the relative
/// residual after each iteration (preconditioned norm for
/// [`pcg`], preconditioned system norm for [`gmres`]), starting with 1.
#[derive(Clone, Debug)]
pub struct KrylovResult {
    pub solution: VectorField,
    pub iterations: usize,
    pub converged: bool,
    /// Indefiniteness or numerical collapse was detected and the solve
    /// stopped early; `solution` holds the last safe iterate.
    pub breakdown: bool,
    pub rel_residual: f64,
    pub residual_history: Vec<f64>,
}

/// Conjugate gradients from a zero initial guess. `apply_m_inv` must be
/// symmetric positive definite; `apply_a` is expected symmetric positive
/// semi-definite, and a direction of non-positive curvature stops the solve
/// with the breakdown flag so the caller can fall back to a safe direction.
pub fn pcg(
    mut apply_a: impl FnMut(&VectorField) -> VectorField,
    mut apply_m_inv: impl FnMut(&VectorField) -> VectorField,
    rhs: &VectorField,
    rel_tol: f64,
    max_iters: usize,
) -> KrylovResult {
    let grid = rhs.grid();
    let mut x = VectorField::zeros(grid);
    if rhs.inf_norm() == 0.0 {
        return KrylovResult {
            solution: x,
            iterations: 0,
            converged: true,
            breakdown: false,
            rel_residual: 0.0,
            residual_history: vec![0.0],
        };
    }
    let mut r = rhs.clone();
    let mut z = apply_m_inv(&r);
    let mut rz = inner_vec(&r, &z);
    if rz <= 0.0 {
        // A preconditioner this broken cannot drive the iteration.
        return KrylovResult {
            solution: x,
            iterations: 0,
            converged: false,
            breakdown: true,
            rel_residual: 1.0,
            residual_history: vec![1.0],
        };
    }
    let norm0 = rz.sqrt();
    let mut p = z.clone();
    let mut history = vec![1.0];
    let mut iterations = 0;
    let mut converged = false;
    let mut breakdown = false;
    for _ in 0..max_iters {
        let ap = apply_a(&p);
        let pap = inner_vec(&p, &ap);
        if pap <= 0.0 {
            breakdown = true;
            break;
        }
        let alpha = rz / pap;
        x.add_scaled(&p, alpha);
        r.add_scaled(&ap, -alpha);
        z = apply_m_inv(&r);
        let rz_new = inner_vec(&r, &z).max(0.0);
        iterations += 1;
        let rel = rz_new.sqrt() / norm0;
        history.push(rel);
        if rel <= rel_tol {
            converged = true;
            rz = rz_new;
            break;
        }
        if rz_new == 0.0 {
            converged = true;
            rz = rz_new;
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        p.scale(beta);
        p.add_scaled(&z, 1.0);
    }
    KrylovResult {
        solution: x,
        iterations,
        converged,
        breakdown,
        rel_residual: rz.sqrt() / norm0,
        residual_history: history,
    }
}

/// GMRES without restarts from a zero initial guess, on whatever operator
/// the closure applies (typically a preconditioned composition). Stops on
/// the relative residual of that system, a happy breakdown, or the
/// iteration cap.
pub fn gmres(
    mut apply_op: impl FnMut(&VectorField) -> VectorField,
    rhs: &VectorField,
    rel_tol: f64,
    max_iters: usize,
) -> KrylovResult {
    let grid = rhs.grid();
    let beta = inner_vec(rhs, rhs).sqrt();
    if beta == 0.0 {
        return KrylovResult {
            solution: VectorField::zeros(grid),
            iterations: 0,
            converged: true,
            breakdown: false,
            rel_residual: 0.0,
            residual_history: vec![0.0],
        };
    }
    let mut basis: Vec<VectorField> = Vec::with_capacity(max_iters + 1);
    let mut first = rhs.clone();
    first.scale(1.0 / beta);
    basis.push(first);
    // Hessenberg columns after Givens elimination, rotation pairs, and the
    // rotated right-hand side.
    let mut h_cols: Vec<Vec<f64>> = Vec::with_capacity(max_iters);
    let mut cs: Vec<f64> = Vec::with_capacity(max_iters);
    let mut sn: Vec<f64> = Vec::with_capacity(max_iters);
    let mut gvec = vec![beta];
    let mut history = vec![1.0];
    let mut converged = false;
    let mut breakdown = false;
    let mut iterations = 0;
    for j in 0..max_iters {
        let mut w = apply_op(&basis[j]);
        let mut col = Vec::with_capacity(j + 2);
        for vi in basis.iter().take(j + 1) {
            let hij = inner_vec(&w, vi);
            w.add_scaled(vi, -hij);
            col.push(hij);
        }
        let h_next = inner_vec(&w, &w).sqrt();
        // Apply stored rotations to the new column, then eliminate the
        // subdiagonal with a fresh one.
        for i in 0..j {
            let t = cs[i] * col[i] + sn[i] * col[i + 1];
            col[i + 1] = -sn[i] * col[i] + cs[i] * col[i + 1];
            col[i] = t;
        }
        let denom = (col[j] * col[j] + h_next * h_next).sqrt();
        let (c, s) = if denom == 0.0 {
            (1.0, 0.0)
        } else {
            (col[j] / denom, h_next / denom)
        };
        col[j] = denom;
        cs.push(c);
        sn.push(s);
        gvec.push(-s * gvec[j]);
        gvec[j] *= c;
        h_cols.push(col);
        iterations = j + 1;
        let rel = gvec[j + 1].abs() / beta;
        history.push(rel);
        if rel <= rel_tol {
            converged = true;
            break;
        }
        if h_next <= f64::EPSILON * beta {
            // The Krylov space closed without meeting the tolerance.
            breakdown = true;
            break;
        }
        w.scale(1.0 / h_next);
        basis.push(w);
    }
    // Back-substitute for the coefficients and assemble the iterate.
    let k = iterations;
    let mut y = vec![0.0; k];
    for i in (0..k).rev() {
        let mut s = gvec[i];
        for (c, yc) in y.iter().enumerate().skip(i + 1) {
            s -= h_cols[c][i] * yc;
        }
        y[i] = s / h_cols[i][i];
    }
    let mut x = VectorField::zeros(grid);
    for (yi, vi) in y.iter().zip(basis.iter()) {
        x.add_scaled(vi, *yi);
    }
    KrylovResult {
        solution: x,
        iterations,
        converged,
        breakdown,
        rel_residual: gvec[k].abs() / beta,
        residual_history: history,
    }
}
