//! Windowed nonlinear acceleration of the damped fixed-point iteration:
//! NGMRES mixing over gradient differences, Anderson mixing over residual
//! differences, and the generalized alternation that interleaves accelerated
//! iterations with plain descent steps on a fixed `(sigma, tau)` cadence.
//!
//! The loop is generic over [`FixedPointMap`] so the exact production code
//! path can be exercised on small linear maps, where its behavior has a
//! classical reference (see [`crate::check`]).

use std::collections::VecDeque;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fixedpoint::{DescentMap, FixedPointMap, LineSearchState, StopCriteria};
use crate::grid::VectorField;
use crate::models::ProblemSpec;
use crate::report::{IterRecord, SolveReport, Status};

/// Which mixing rule the accelerated iterations use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixingVariant {
    Ngmres,
    Anderson,
}

/// Window depth. `Unbounded` keeps every iterate, encoded internally as a
/// depth of twice the iteration budget so the ring buffer never wraps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Window {
    Finite(usize),
    Unbounded,
}

/// Whether a `(sigma, tau)` cycle opens with accelerated or plain steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOrdering {
    AccelFirst,
    FpFirst,
}

/// Hyperparameters of the alternating accelerated solver.
#[derive(Clone, Copy, Debug)]
pub struct AccelConfig {
    pub variant: MixingVariant,
    pub window: Window,
    pub sigma: usize,
    pub tau: usize,
    pub ordering: StepOrdering,
}

impl AccelConfig {
    pub fn new(
        variant: MixingVariant,
        window: Window,
        sigma: usize,
        tau: usize,
        ordering: StepOrdering,
    ) -> Result<Self> {
        if let Window::Finite(w) = window {
            if w == 0 {
                return Err(Error::InvalidParameter(
                    "mixing window must be at least 1".into(),
                ));
            }
        }
        if sigma == 0 {
            return Err(Error::InvalidParameter(
                "sigma must be at least 1; tau = 0 already disables alternation".into(),
            ));
        }
        Ok(Self {
            variant,
            window,
            sigma,
            tau,
            ordering,
        })
    }

    /// Concrete ring-buffer depth for a given iteration budget.
    pub fn effective_window(&self, n_iter: usize) -> usize {
        match self.window {
            Window::Finite(w) => w,
            Window::Unbounded => 2 * n_iter,
        }
    }

    /// Whether iteration `k` runs an accelerated step. With `tau = 0` every
    /// iteration accelerates regardless of `sigma` or ordering, collapsing
    /// the alternation to the pure windowed method.
    pub fn is_accel_step(&self, k: usize) -> bool {
        let cycle = self.sigma + self.tau;
        match self.ordering {
            StepOrdering::AccelFirst => (k % cycle) < self.sigma,
            StepOrdering::FpFirst => (k % cycle) >= self.tau,
        }
    }
}

/// The shared stop disjunction: gradient small relative to the start, or
/// out of iterations.
pub fn stopping_check(g_new_inf: f64, g0_inf: f64, k: usize, stop: &StopCriteria) -> bool {
    g_new_inf <= stop.eps_rel * g0_inf || k >= stop.n_iter
}

/// Relative pivot threshold below which trailing columns are dropped from
/// the mixing solve. Iterate differences go nearly collinear as the outer
/// iteration converges, so rank deficiency is the expected steady state,
/// not an error.
const PIVOT_DROP: f64 = 1e-12;

/// Minimize `|| rhs + sum_i beta_i col_i ||_2` by column-pivoted Householder
/// QR. Columns whose pivot falls below `PIVOT_DROP` times the largest pivot
/// get coefficient exactly 0, as does everything when all columns vanish.
pub fn solve_mixing_lsq(columns: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = columns.len();
    if n == 0 {
        return Vec::new();
    }
    let m = rhs.len();
    debug_assert!(columns.iter().all(|c| c.len() == m));
    let mut a: Vec<Vec<f64>> = columns.to_vec();
    // Solve A beta ~ -rhs in the least-squares sense.
    let mut b: Vec<f64> = rhs.iter().map(|x| -x).collect();
    let mut perm: Vec<usize> = (0..n).collect();
    let steps = n.min(m);
    let mut kept = steps;
    let mut first_pivot = 0.0_f64;
    for j in 0..steps {
        let mut best = j;
        let mut best_norm2 = 0.0_f64;
        for c in j..n {
            let norm2: f64 = a[c][j..].iter().map(|x| x * x).sum();
            if norm2 > best_norm2 {
                best_norm2 = norm2;
                best = c;
            }
        }
        a.swap(j, best);
        perm.swap(j, best);
        let pivot = best_norm2.sqrt();
        if j == 0 {
            first_pivot = pivot;
        }
        if pivot <= PIVOT_DROP * first_pivot {
            kept = j;
            break;
        }
        let x0 = a[j][j];
        let alpha = if x0 >= 0.0 { -pivot } else { pivot };
        let mut u = a[j][j..].to_vec();
        u[0] -= alpha;
        let u_norm2: f64 = u.iter().map(|x| x * x).sum();
        for c in (j + 1)..n {
            let proj: f64 = u.iter().zip(&a[c][j..]).map(|(ui, ai)| ui * ai).sum();
            let f = 2.0 * proj / u_norm2;
            for (ui, ai) in u.iter().zip(a[c][j..].iter_mut()) {
                *ai -= f * ui;
            }
        }
        let proj: f64 = u.iter().zip(&b[j..]).map(|(ui, bi)| ui * bi).sum();
        let f = 2.0 * proj / u_norm2;
        for (ui, bi) in u.iter().zip(b[j..].iter_mut()) {
            *bi -= f * ui;
        }
        a[j][j] = alpha;
        for entry in a[j][j + 1..].iter_mut() {
            *entry = 0.0;
        }
    }
    let mut y = vec![0.0_f64; kept];
    for j in (0..kept).rev() {
        let mut s = b[j];
        for c in (j + 1)..kept {
            s -= a[c][j] * y[c];
        }
        y[j] = s / a[j][j];
    }
    let mut beta = vec![0.0_f64; n];
    for (j, val) in y.into_iter().enumerate() {
        beta[perm[j]] = val;
    }
    beta
}

/// NGMRES iterate combination `q(v) + sum_i beta_i (q(v) - v_i)`, with the
/// past iterates ordered newest-first and aligned with `beta`.
pub fn ngmres_update(qv: &[f64], iterates: &[&[f64]], beta: &[f64]) -> Vec<f64> {
    debug_assert_eq!(iterates.len(), beta.len());
    let mut out = qv.to_vec();
    for (b, vi) in beta.iter().zip(iterates) {
        if *b != 0.0 {
            for (o, (q, v)) in out.iter_mut().zip(qv.iter().zip(vi.iter())) {
                *o += b * (q - v);
            }
        }
    }
    out
}

/// Anderson iterate combination `q(v) + sum_i xi_i (q(v) - q(v_i))` over the
/// past images of `q`, newest-first, aligned with `xi`.
pub fn aa_update(qv: &[f64], images: &[&[f64]], xi: &[f64]) -> Vec<f64> {
    debug_assert_eq!(images.len(), xi.len());
    let mut out = qv.to_vec();
    for (c, qi) in xi.iter().zip(images) {
        if *c != 0.0 {
            for (o, (q, qq)) in out.iter_mut().zip(qv.iter().zip(qi.iter())) {
                *o += c * (q - qq);
            }
        }
    }
    out
}

/// Everything the caller needs from a finished acceleration loop.
pub struct GaOutcome {
    pub v: Vec<f64>,
    pub status: Status,
    pub iterations: usize,
    pub grad_norm: f64,
    pub grad_norm0: f64,
    pub objective: f64,
    pub trace: Vec<IterRecord>,
}

fn inf_norm_flat(x: &[f64]) -> f64 {
    x.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// The alternating accelerated fixed-point loop over an abstract map.
///
/// Every iteration takes the preliminary step `q(v_k)`. Scheduled plain
/// iterations accept it as-is; accelerated iterations mix it with the
/// history window. A stagnated line search is rescued by attempting the
/// mixing combination anyway (with `q(v_k)` taken as `v_k`); only when that
/// combination goes nowhere does the loop stop as stagnated.
pub fn ga_loop<M: FixedPointMap>(
    map: &mut M,
    v0: Vec<f64>,
    cfg: &AccelConfig,
    stop: &StopCriteria,
) -> GaOutcome {
    let w_eff = cfg.effective_window(stop.n_iter);
    let (mut g, mut obj) = map.grad_obj(&v0);
    let mut v = v0;
    let g0_norm = inf_norm_flat(&g);
    let mut gnorm = g0_norm;
    let mut trace = vec![IterRecord {
        iter: 0,
        objective: obj,
        grad_norm: gnorm,
    }];
    // Newest-first windows: pairs (iterate, gradient) for NGMRES, triples
    // (iterate, residual, image) for Anderson.
    let mut ng_hist: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    let mut aa_hist: VecDeque<(Vec<f64>, Vec<f64>, Vec<f64>)> = VecDeque::new();
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
        let q_res = map.q(&v, &g, obj);
        let q_ok = q_res.is_ok();
        let qv = q_res.unwrap_or_else(|_| v.clone());
        if !cfg.is_accel_step(k) && q_ok {
            match cfg.variant {
                MixingVariant::Ngmres => {
                    ng_hist.push_front((v.clone(), g.clone()));
                    ng_hist.truncate(w_eff + 1);
                }
                MixingVariant::Anderson => {
                    let rk = diff(&v, &qv);
                    aa_hist.push_front((v.clone(), rk, qv.clone()));
                    aa_hist.truncate(w_eff);
                }
            }
            v = qv;
            let (gn, on) = map.grad_obj(&v);
            g = gn;
            obj = on;
        } else {
            // Accelerated iteration, or the stagnation rescue path.
            match cfg.variant {
                MixingVariant::Ngmres => {
                    ng_hist.push_front((v.clone(), g.clone()));
                    ng_hist.truncate(w_eff + 1);
                    debug_assert_eq!(ng_hist.len(), (k + 1).min(w_eff + 1));
                    let (gbar, obar) = if q_ok {
                        map.grad_obj(&qv)
                    } else {
                        (g.clone(), obj)
                    };
                    let t0 = Instant::now();
                    let cols: Vec<Vec<f64>> =
                        ng_hist.iter().map(|(_, gi)| diff(&gbar, gi)).collect();
                    let beta = solve_mixing_lsq(&cols, &gbar);
                    let mixed = beta.iter().any(|b| *b != 0.0);
                    let vnew = if mixed {
                        let past: Vec<&[f64]> =
                            ng_hist.iter().map(|(vi, _)| vi.as_slice()).collect();
                        ngmres_update(&qv, &past, &beta)
                    } else {
                        qv.clone()
                    };
                    map.note_lsq_time(t0.elapsed().as_secs_f64());
                    if !q_ok && vnew == v {
                        status = Status::Stagnated;
                        iterations = k;
                        break;
                    }
                    if mixed {
                        let (gn, on) = map.grad_obj(&vnew);
                        g = gn;
                        obj = on;
                    } else {
                        // The accelerated iterate is exactly q(v_k), so its
                        // already-computed gradient carries over.
                        g = gbar;
                        obj = obar;
                    }
                    v = vnew;
                }
                MixingVariant::Anderson => {
                    let rk = diff(&v, &qv);
                    debug_assert_eq!(aa_hist.len(), k.min(w_eff));
                    let t0 = Instant::now();
                    let cols: Vec<Vec<f64>> =
                        aa_hist.iter().map(|(_, ri, _)| diff(&rk, ri)).collect();
                    let xi = solve_mixing_lsq(&cols, &rk);
                    let mixed = xi.iter().any(|c| *c != 0.0);
                    let vnew = if mixed {
                        let images: Vec<&[f64]> =
                            aa_hist.iter().map(|(_, _, qi)| qi.as_slice()).collect();
                        aa_update(&qv, &images, &xi)
                    } else {
                        qv.clone()
                    };
                    map.note_lsq_time(t0.elapsed().as_secs_f64());
                    aa_hist.push_front((v.clone(), rk, qv));
                    aa_hist.truncate(w_eff);
                    if !q_ok && vnew == v {
                        status = Status::Stagnated;
                        iterations = k;
                        break;
                    }
                    v = vnew;
                    let (gn, on) = map.grad_obj(&v);
                    g = gn;
                    obj = on;
                }
            }
        }
        gnorm = inf_norm_flat(&g);
        trace.push(IterRecord {
            iter: k + 1,
            objective: obj,
            grad_norm: gnorm,
        });
    }
    GaOutcome {
        v,
        status,
        iterations,
        grad_norm: gnorm,
        grad_norm0: g0_norm,
        objective: obj,
        trace,
    }
}

/// Accelerated solve of the transport problem from `v = 0`.
pub fn ga_solve(
    spec: &ProblemSpec,
    cfg: &AccelConfig,
    stop: &StopCriteria,
    ls: LineSearchState,
) -> SolveReport {
    let t_start = Instant::now();
    let mut map = DescentMap::new(spec);
    map.ls = ls;
    let v0 = vec![0.0_f64; 2 * spec.grid().len()];
    let out = ga_loop(&mut map, v0, cfg, stop);
    let first = map
        .first_objective
        .expect("the loop evaluates at least the initial gradient");
    let last = map.last_objective.expect("same call records last");
    let dist = if first.mismatch > 0.0 {
        (last.mismatch / first.mismatch).sqrt()
    } else {
        0.0
    };
    SolveReport {
        v: VectorField::from_flat(spec.grid(), &out.v).expect("loop preserves dimension"),
        status: out.status,
        iterations: out.iterations,
        counters: map.counters,
        objective: last,
        grad_norm: out.grad_norm,
        grad_norm0: out.grad_norm0,
        dist,
        wall_time: t_start.elapsed().as_secs_f64(),
        trace: out.trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::Stagnation;
    use crate::grid::{GridSpec, ScalarField};
    use crate::models::ModelKind;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn residual_norm(columns: &[Vec<f64>], rhs: &[f64], beta: &[f64]) -> f64 {
        let mut r = rhs.to_vec();
        for (b, col) in beta.iter().zip(columns) {
            for (ri, ci) in r.iter_mut().zip(col) {
                *ri += b * ci;
            }
        }
        r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn lsq_zero_rhs_gives_zero_coefficients() {
        let cols = vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, -1.0]];
        let rhs = vec![0.0; 3];
        assert_eq!(solve_mixing_lsq(&cols, &rhs), vec![0.0, 0.0]);
    }

    #[test]
    fn lsq_single_opposite_column_cancels_exactly() {
        let rhs = vec![0.5, -1.25, 2.0, 0.75];
        let col: Vec<f64> = rhs.iter().map(|x| -x).collect();
        let beta = solve_mixing_lsq(&[col.clone()], &rhs);
        assert!((beta[0] - 1.0).abs() < 1e-12);
        assert!(residual_norm(&[col], &rhs, &beta) < 1e-12);
    }

    #[test]
    fn lsq_all_zero_columns_degenerate_to_zero() {
        let cols = vec![vec![0.0; 5], vec![0.0; 5]];
        let rhs = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(solve_mixing_lsq(&cols, &rhs), vec![0.0, 0.0]);
    }

    #[test]
    fn lsq_matches_normal_equations_oracle() {
        // Random full-rank 3-column system at the size of a flattened 8x8
        // velocity field, checked against a dense normal-equations solve.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = 2 * 8 * 8;
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = solve_mixing_lsq(&cols, &rhs);

        let a = nalgebra::DMatrix::from_fn(m, 3, |i, j| cols[j][i]);
        let b = nalgebra::DVector::from_fn(m, |i, _| -rhs[i]);
        let ata = a.transpose() * &a;
        let atb = a.transpose() * b;
        let oracle = ata.lu().solve(&atb).expect("full rank by construction");
        for j in 0..3 {
            let denom = oracle[j].abs().max(1.0);
            assert!(
                (beta[j] - oracle[j]).abs() / denom < 1e-8,
                "coefficient {j}: {} vs oracle {}",
                beta[j],
                oracle[j]
            );
        }
    }

    #[test]
    fn lsq_drops_duplicate_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = 32;
        let big: Vec<f64> = (0..m).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let small: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let cols = vec![big.clone(), small, big.clone()];
        let rhs: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let beta = solve_mixing_lsq(&cols, &rhs);
        assert!(beta.iter().all(|b| b.is_finite()));
        assert_eq!(
            beta[2], 0.0,
            "the later duplicate loses the pivot competition and is dropped"
        );
    }

    #[test]
    fn updates_with_zero_coefficients_return_the_plain_step() {
        let qv = vec![1.0, 2.0, 3.0];
        let past = vec![vec![0.0, 0.0, 0.0]];
        let refs: Vec<&[f64]> = past.iter().map(|p| p.as_slice()).collect();
        assert_eq!(ngmres_update(&qv, &refs, &[0.0]), qv);
        assert_eq!(aa_update(&qv, &refs, &[0.0]), qv);
    }

    /// Damped Richardson iteration on a small SPD system, as a stand-in map
    /// with a known objective `v'Av/2 - b'v`.
    struct RichardsonMap {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        omega: f64,
        fail_q_at: Option<usize>,
        q_calls: usize,
    }

    impl RichardsonMap {
        fn apply(&self, v: &[f64]) -> Vec<f64> {
            self.a
                .iter()
                .map(|row| row.iter().zip(v).map(|(aij, vj)| aij * vj).sum())
                .collect()
        }
    }

    impl FixedPointMap for RichardsonMap {
        fn dim(&self) -> usize {
            self.b.len()
        }

        fn grad_obj(&mut self, v: &[f64]) -> (Vec<f64>, f64) {
            let av = self.apply(v);
            let g: Vec<f64> = av.iter().zip(&self.b).map(|(a, b)| a - b).collect();
            let obj = 0.5 * v.iter().zip(&av).map(|(x, y)| x * y).sum::<f64>()
                - v.iter().zip(&self.b).map(|(x, y)| x * y).sum::<f64>();
            (g, obj)
        }

        fn q(
            &mut self,
            v: &[f64],
            g: &[f64],
            _obj: f64,
        ) -> std::result::Result<Vec<f64>, Stagnation> {
            let call = self.q_calls;
            self.q_calls += 1;
            if self.fail_q_at == Some(call) {
                return Err(Stagnation);
            }
            Ok(v.iter().zip(g).map(|(vi, gi)| vi - self.omega * gi).collect())
        }
    }

    fn small_spd(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let x = rng.gen_range(-0.3..0.3);
                a[i][j] = x;
                a[j][i] = x;
            }
            a[i][i] += 2.0;
        }
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        (a, b)
    }

    fn ngmres_cfg(w: usize, sigma: usize, tau: usize) -> AccelConfig {
        AccelConfig::new(
            MixingVariant::Ngmres,
            Window::Finite(w),
            sigma,
            tau,
            StepOrdering::AccelFirst,
        )
        .unwrap()
    }

    #[test]
    fn loop_is_deterministic_run_to_run() {
        let stop = StopCriteria::new(1e-10, 40).unwrap();
        let cfg = ngmres_cfg(3, 2, 1);
        let run = || {
            let (a, b) = small_spd(6, 11);
            let mut map = RichardsonMap {
                a,
                b,
                omega: 0.3,
                fail_q_at: None,
                q_calls: 0,
            };
            ga_loop(&mut map, vec![0.0; 6], &cfg, &stop)
        };
        let r1 = run();
        let r2 = run();
        assert_eq!(r1.v, r2.v);
        assert_eq!(r1.iterations, r2.iterations);
        assert_eq!(r1.trace.len(), r2.trace.len());
        for (a, b) in r1.trace.iter().zip(&r2.trace) {
            assert_eq!(a.objective, b.objective);
            assert_eq!(a.grad_norm, b.grad_norm);
        }
    }

    #[test]
    fn accelerated_loop_converges_on_the_linear_model() {
        let stop = StopCriteria::new(1e-8, 60).unwrap();
        for variant in [MixingVariant::Ngmres, MixingVariant::Anderson] {
            let (a, b) = small_spd(8, 3);
            let mut map = RichardsonMap {
                a,
                b,
                omega: 0.3,
                fail_q_at: None,
                q_calls: 0,
            };
            let cfg = AccelConfig::new(
                variant,
                Window::Unbounded,
                1,
                0,
                StepOrdering::AccelFirst,
            )
            .unwrap();
            let out = ga_loop(&mut map, vec![0.0; 8], &cfg, &stop);
            assert_eq!(out.status, Status::Converged, "{variant:?}");
            assert!(out.grad_norm <= 1e-8 * out.grad_norm0);
        }
    }

    #[test]
    fn stagnation_at_start_has_no_rescue() {
        let (a, b) = small_spd(4, 5);
        let mut map = RichardsonMap {
            a,
            b,
            omega: 0.3,
            fail_q_at: Some(0),
            q_calls: 0,
        };
        let stop = StopCriteria::new(1e-10, 20).unwrap();
        let out = ga_loop(&mut map, vec![0.0; 4], &ngmres_cfg(5, 1, 0), &stop);
        assert_eq!(out.status, Status::Stagnated);
        assert_eq!(out.iterations, 0);
    }

    #[test]
    fn stagnation_with_history_is_rescued_by_mixing() {
        let (a, b) = small_spd(4, 5);
        let mut map = RichardsonMap {
            a,
            b,
            omega: 0.3,
            fail_q_at: Some(3),
            q_calls: 0,
        };
        let stop = StopCriteria::new(1e-8, 40).unwrap();
        let out = ga_loop(&mut map, vec![0.0; 4], &ngmres_cfg(5, 1, 0), &stop);
        assert_eq!(
            out.status,
            Status::Converged,
            "gradient differences in the window carry the step past the failure"
        );
    }

    fn toy_problem(n: usize, nt: usize) -> ProblemSpec {
        let g = GridSpec::new(n, n, nt).unwrap();
        let m0 = ScalarField::from_fn(g, |x1, x2| 0.5 + 0.25 * x1.sin() * x2.sin());
        let m1 = ScalarField::from_fn(g, |x1, x2| {
            0.5 + 0.25 * (x1 + 0.3).sin() * (x2 - 0.2).sin()
        });
        ProblemSpec::new(ModelKind::Advection, 1e-2, 0.0, &m0, &m1).unwrap()
    }

    #[test]
    fn alternation_with_tau_zero_reproduces_the_pure_method() {
        let spec = toy_problem(16, 2);
        let stop = StopCriteria::new(1e-3, 30).unwrap();
        let base = ga_solve(&spec, &ngmres_cfg(3, 1, 0), &stop, LineSearchState::default());
        for sigma in [2, 5] {
            let alt = ga_solve(
                &spec,
                &ngmres_cfg(3, sigma, 0),
                &stop,
                LineSearchState::default(),
            );
            assert_eq!(alt.iterations, base.iterations, "sigma = {sigma}");
            assert_eq!(
                VectorField::sub(&alt.v, &base.v).inf_norm(),
                0.0,
                "sigma = {sigma}"
            );
            for (x, y) in alt.trace.iter().zip(&base.trace) {
                assert_eq!(x.objective, y.objective);
                assert_eq!(x.grad_norm, y.grad_norm);
            }
        }
    }

    #[test]
    fn accelerated_transport_solve_converges_and_audits_cleanly() {
        let spec = toy_problem(32, 4);
        let stop = StopCriteria::new(5e-2, 60).unwrap();
        let report = ga_solve(&spec, &ngmres_cfg(5, 5, 1), &stop, LineSearchState::default());
        assert_eq!(report.status, Status::Converged);
        assert!(report.iterations > 0);
        let c = &report.counters;
        assert_eq!(c.pdes, c.objective_evals + 2 * c.gradient_evals + 2 * c.matvecs);
        assert!(report.dist < 1.0, "mismatch shrank from the start");
    }

    #[test]
    fn anderson_transport_solve_converges_on_the_easy_problem() {
        let spec = toy_problem(32, 4);
        let stop = StopCriteria::new(5e-2, 60).unwrap();
        let cfg = AccelConfig::new(
            MixingVariant::Anderson,
            Window::Finite(5),
            5,
            1,
            StepOrdering::AccelFirst,
        )
        .unwrap();
        let report = ga_solve(&spec, &cfg, &stop, LineSearchState::default());
        assert_eq!(report.status, Status::Converged);
    }
}
