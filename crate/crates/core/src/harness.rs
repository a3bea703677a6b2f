//! Config-driven experiment runner: expands a JSON description of a problem
//! and a method list into solver runs, executes the cells (in parallel when a
//! rayon pool is installed), and writes one CSV row per cell.
//!
//! Column semantics, since the timer boundaries are easy to misread:
//! `t_pdes` counts transport sweeps wherever they occur, `t_q` counts
//! candidate construction (line-search and mixing trial assembly) minus the
//! sweeps it triggers, `t_f` counts standalone objective evaluations,
//! `t_ls` counts mixing least-squares solves, and `t_total` is the wall
//! clock of the whole solve. Only counts and accuracy columns are stable
//! across reruns; timing columns are reported, never asserted.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{ga_solve, AccelConfig, MixingVariant, StepOrdering, Window};
use crate::data::{make_dataset, make_sinusoidal, random_band_limited, DatasetKind};
use crate::error::{Error, Result};
use crate::fixedpoint::{rpgd_solve, LineSearchState, StopCriteria};
use crate::grid::{GridSpec, ScalarField, VectorField};
use crate::io::{save_scalar, save_vector};
use crate::models::{forward_trajectory, ModelKind, ProblemSpec};
use crate::newton::{nk_solve, NewtonConfig, NkPreconditioner};
use crate::report::{SolveReport, Status};
use crate::transport::{compute_flow_map, det_deformation_gradient};

/// Fixed leading columns of every CSV this module writes. Sweeps append
/// their own columns after `status` but never reorder these.
pub const BASE_HEADER: &str =
    "run,method,w,sigma,tau,iters,pdes,matvecs,dist,grad,t_pdes,t_q,t_f,t_ls,t_total,status";

fn sci(x: f64) -> String {
    format!("{x:.6e}")
}

/// Window hyperparameter as written in a config: a single depth, a list of
/// depths, or the word `inf` for an unbounded history.
#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
pub enum WindowSpec {
    One(usize),
    Many(Vec<WindowItem>),
    Word(String),
}

#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
pub enum WindowItem {
    Depth(usize),
    Word(String),
}

/// Alternation cycle `(sigma, tau)` as written in a config: one pair or a
/// list of pairs.
#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
pub enum CycleSpec {
    Pair([usize; 2]),
    Pairs(Vec<[usize; 2]>),
}

/// One entry of the `methods` list. A single permissive shape with
/// per-kind validation in `plan_runs` keeps unknown-key rejection intact,
/// which serde cannot provide on tagged enums.
#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    /// One of `rpgd`, `ngmres`, `anderson`, `newton`.
    pub kind: String,
    #[serde(default)]
    pub w: Option<WindowSpec>,
    #[serde(default)]
    pub p: Option<CycleSpec>,
    /// `accel_first` (default) or `fp_first`.
    #[serde(default)]
    pub ordering: Option<String>,
    /// Newton only: `ireg`, `2lrpcsym`, or `h0rpc`.
    #[serde(default)]
    pub preconditioner: Option<String>,
}

/// Dataset field of a config: either a bare name (`rect`, `sinusoidal`,
/// `gaussians`, `matched`, `random`) or an object carrying the randomized
/// generator's knobs.
#[derive(Deserialize, Debug, Clone)]
#[serde(untagged)]
pub enum DatasetSpec {
    Name(String),
    Entry(DatasetEntry),
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub kind: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub k_max: Option<i64>,
    #[serde(default)]
    pub rolloff: Option<f64>,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct AlphaSweep {
    /// Penalty weights, one block of rows per value in listed order.
    pub values: Vec<f64>,
    /// Method label whose best wall time anchors the speedup column;
    /// defaults to the first planned method.
    #[serde(default)]
    pub baseline: Option<String>,
}

#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct MeshSweep {
    /// Spatial resolutions; each must be a multiple of 16 so the step-count
    /// pairing `nt = n / 16` stays integral.
    pub resolutions: Vec<usize>,
    /// Subset of {`fixed`, `scaled`}; both when omitted.
    #[serde(default)]
    pub policies: Option<Vec<String>>,
}

/// A whole experiment file. Unknown keys are rejected so typos fail loudly
/// instead of silently running defaults.
#[derive(Deserialize, Debug, Clone)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    /// Spatial resolution; grids are square.
    pub n: usize,
    pub nt: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// One of `advection`, `continuity`, `incompressible`.
    pub model: String,
    pub alpha: f64,
    /// Relative gradient tolerance.
    pub eps: f64,
    #[serde(default = "default_iter_cap")]
    pub n_iter: usize,
    pub methods: Vec<MethodEntry>,
    #[serde(default)]
    pub alpha_sweep: Option<AlphaSweep>,
    #[serde(default)]
    pub mesh_sweep: Option<MeshSweep>,
    /// Write per-run field files next to the CSV.
    #[serde(default)]
    pub diagnostics: bool,
    /// Output directory; a CLI `--out` flag takes precedence.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_gamma() -> f64 {
    1.0
}

fn default_iter_cap() -> usize {
    200
}

/// Parse a config file, mapping syntax and schema problems to `Config`
/// errors so the caller can map them to the config-error exit code.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Pick the output directory: an explicit flag wins, then the config field.
pub fn resolve_out(cfg: &ExperimentConfig, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.out.clone()).ok_or_else(|| {
        Error::Config("no output directory: set \"out\" in the config or pass --out".into())
    })
}

enum MethodCell {
    Rpgd,
    Mixing(AccelConfig),
    Newton(NewtonConfig),
}

/// One solver invocation with its CSV identity fixed up front.
pub struct PlannedRun {
    pub label: String,
    w: String,
    sigma: String,
    tau: String,
    cell: MethodCell,
}

fn parse_model(name: &str) -> Result<ModelKind> {
    match name {
        "advection" => Ok(ModelKind::Advection),
        "continuity" => Ok(ModelKind::Continuity),
        "incompressible" => Ok(ModelKind::Incompressible),
        other => Err(Error::Config(format!(
            "unknown model {other:?}; expected advection, continuity, or incompressible"
        ))),
    }
}

fn parse_ordering(name: Option<&str>) -> Result<StepOrdering> {
    match name {
        None | Some("accel_first") => Ok(StepOrdering::AccelFirst),
        Some("fp_first") => Ok(StepOrdering::FpFirst),
        Some(other) => Err(Error::Config(format!(
            "unknown ordering {other:?}; expected accel_first or fp_first"
        ))),
    }
}

fn parse_preconditioner(name: &str) -> Result<NkPreconditioner> {
    match name {
        "ireg" => Ok(NkPreconditioner::InversePenalty),
        "2lrpcsym" => Ok(NkPreconditioner::TwoLevel),
        "h0rpc" => Ok(NkPreconditioner::InitialHessian),
        other => Err(Error::Config(format!(
            "unknown preconditioner {other:?}; expected ireg, 2lrpcsym, or h0rpc"
        ))),
    }
}

fn window_item(item: &WindowItem) -> Result<Window> {
    match item {
        WindowItem::Depth(0) => Err(Error::Config("window depth must be at least 1".into())),
        WindowItem::Depth(w) => Ok(Window::Finite(*w)),
        WindowItem::Word(s) if s == "inf" => Ok(Window::Unbounded),
        WindowItem::Word(other) => Err(Error::Config(format!(
            "unknown window {other:?}; expected a depth or \"inf\""
        ))),
    }
}

fn windows_of(spec: &WindowSpec) -> Result<Vec<Window>> {
    let items = match spec {
        WindowSpec::One(w) => vec![WindowItem::Depth(*w)],
        WindowSpec::Word(s) => vec![WindowItem::Word(s.clone())],
        WindowSpec::Many(items) if items.is_empty() => {
            return Err(Error::Config("empty window list".into()))
        }
        WindowSpec::Many(items) => items.clone(),
    };
    items.iter().map(window_item).collect()
}

fn cycles_of(spec: &CycleSpec) -> Result<Vec<(usize, usize)>> {
    let pairs = match spec {
        CycleSpec::Pair([s, t]) => vec![(*s, *t)],
        CycleSpec::Pairs(pairs) if pairs.is_empty() => {
            return Err(Error::Config("empty cycle list".into()))
        }
        CycleSpec::Pairs(pairs) => pairs.iter().map(|[s, t]| (*s, *t)).collect(),
    };
    Ok(pairs)
}

fn window_label(w: Window) -> String {
    match w {
        Window::Finite(d) => d.to_string(),
        Window::Unbounded => "inf".into(),
    }
}

fn reject_mixing_fields(entry: &MethodEntry) -> Result<()> {
    if entry.w.is_some() || entry.p.is_some() || entry.ordering.is_some() {
        return Err(Error::Config(format!(
            "method {:?} takes no w, p, or ordering",
            entry.kind
        )));
    }
    Ok(())
}

/// Expand the method list into concrete runs. Mixing methods cross their
/// window list (outer) with their cycle list (inner), both in listed order,
/// which fixes the CSV row ordering.
pub fn plan_runs(cfg: &ExperimentConfig) -> Result<Vec<PlannedRun>> {
    if cfg.methods.is_empty() {
        return Err(Error::Config("empty methods list".into()));
    }
    let mut planned = Vec::new();
    for entry in &cfg.methods {
        match entry.kind.as_str() {
            "rpgd" => {
                reject_mixing_fields(entry)?;
                if entry.preconditioner.is_some() {
                    return Err(Error::Config("rpgd takes no preconditioner".into()));
                }
                planned.push(PlannedRun {
                    label: "rpgd".into(),
                    w: String::new(),
                    sigma: String::new(),
                    tau: String::new(),
                    cell: MethodCell::Rpgd,
                });
            }
            kind @ ("ngmres" | "anderson") => {
                if entry.preconditioner.is_some() {
                    return Err(Error::Config(format!("{kind} takes no preconditioner")));
                }
                let variant = if kind == "ngmres" {
                    MixingVariant::Ngmres
                } else {
                    MixingVariant::Anderson
                };
                let ordering = parse_ordering(entry.ordering.as_deref())?;
                let w_spec = entry
                    .w
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{kind} needs a window w")))?;
                let p_spec = entry
                    .p
                    .as_ref()
                    .ok_or_else(|| Error::Config(format!("{kind} needs a cycle list p")))?;
                let label = if ordering == StepOrdering::FpFirst {
                    format!("{kind}/fpfirst")
                } else {
                    kind.to_string()
                };
                for window in windows_of(w_spec)? {
                    for (sigma, tau) in cycles_of(p_spec)? {
                        let accel = AccelConfig::new(variant, window, sigma, tau, ordering)
                            .map_err(|e| Error::Config(e.to_string()))?;
                        planned.push(PlannedRun {
                            label: label.clone(),
                            w: window_label(window),
                            sigma: sigma.to_string(),
                            tau: tau.to_string(),
                            cell: MethodCell::Mixing(accel),
                        });
                    }
                }
            }
            "newton" => {
                reject_mixing_fields(entry)?;
                let pre = entry
                    .preconditioner
                    .as_deref()
                    .ok_or_else(|| Error::Config("newton needs a preconditioner".into()))?;
                let pre = parse_preconditioner(pre)?;
                planned.push(PlannedRun {
                    label: format!("newton({})", entry.preconditioner.as_deref().unwrap()),
                    w: String::new(),
                    sigma: String::new(),
                    tau: String::new(),
                    cell: MethodCell::Newton(NewtonConfig::new(pre)),
                });
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown method kind {other:?}; expected rpgd, ngmres, anderson, or newton"
                )))
            }
        }
    }
    Ok(planned)
}

const RANDOM_SEED_DEFAULT: u64 = 0;
const RANDOM_K_MAX_DEFAULT: i64 = 3;
const RANDOM_ROLLOFF_DEFAULT: f64 = 0.7;

fn build_fields(
    ds: &DatasetSpec,
    g: GridSpec,
    seed_override: Option<u64>,
) -> Result<(ScalarField, ScalarField)> {
    let entry = match ds {
        DatasetSpec::Name(name) => DatasetEntry {
            kind: name.clone(),
            seed: None,
            k_max: None,
            rolloff: None,
        },
        DatasetSpec::Entry(entry) => entry.clone(),
    };
    if entry.kind != "random" {
        if entry.seed.is_some() || entry.k_max.is_some() || entry.rolloff.is_some() {
            return Err(Error::Config(format!(
                "dataset {:?} takes no seed, k_max, or rolloff",
                entry.kind
            )));
        }
        if seed_override.is_some() {
            return Err(Error::Config(format!(
                "--seed only applies to the random dataset, not {:?}",
                entry.kind
            )));
        }
    }
    match entry.kind.as_str() {
        "rect" => Ok(make_dataset(DatasetKind::Rect, g)),
        "sinusoidal" => Ok(make_dataset(DatasetKind::Sinusoidal, g)),
        "gaussians" => Ok(make_dataset(DatasetKind::GaussianDensities, g)),
        // Identical endpoints: the degenerate pair whose solve must finish
        // in zero iterations, kept as a harness-level smoke fixture.
        "matched" => {
            let (m0, _) = make_sinusoidal(g);
            Ok((m0.clone(), m0))
        }
        "random" => {
            let seed = seed_override
                .or(entry.seed)
                .unwrap_or(RANDOM_SEED_DEFAULT);
            let k_max = entry.k_max.unwrap_or(RANDOM_K_MAX_DEFAULT);
            let rolloff = entry.rolloff.unwrap_or(RANDOM_ROLLOFF_DEFAULT);
            let m0 = random_band_limited(g, seed, k_max, rolloff);
            let m1 = random_band_limited(g, seed.wrapping_add(1), k_max, rolloff);
            Ok((m0, m1))
        }
        other => Err(Error::Config(format!(
            "unknown dataset {other:?}; expected rect, sinusoidal, gaussians, matched, or random"
        ))),
    }
}

/// Build a dataset's endpoint pair outside a full experiment config, with
/// any randomized-generator knobs read from the spec itself.
pub fn build_dataset(ds: &DatasetSpec, g: GridSpec) -> Result<(ScalarField, ScalarField)> {
    build_fields(ds, g, None)
}

fn build_problem(
    cfg: &ExperimentConfig,
    n: usize,
    nt: usize,
    gamma: f64,
    alpha: f64,
    seed: Option<u64>,
) -> Result<ProblemSpec> {
    let g = GridSpec::new(n, n, nt)?;
    let (m0, m1) = build_fields(&cfg.dataset, g, seed)?;
    ProblemSpec::new(parse_model(&cfg.model)?, alpha, gamma, &m0, &m1)
}

fn solve_cell(spec: &ProblemSpec, stop: &StopCriteria, cell: &MethodCell) -> Result<SolveReport> {
    match cell {
        MethodCell::Rpgd => Ok(rpgd_solve(spec, stop)),
        MethodCell::Mixing(accel) => Ok(ga_solve(spec, accel, stop, LineSearchState::default())),
        MethodCell::Newton(config) => nk_solve(spec, config, stop, LineSearchState::default()),
    }
}

fn execute(
    spec: &ProblemSpec,
    stop: &StopCriteria,
    planned: &[PlannedRun],
) -> Result<Vec<SolveReport>> {
    planned
        .par_iter()
        .map(|p| solve_cell(spec, stop, &p.cell))
        .collect()
}

/// One CSV row. `extra` carries sweep-specific trailing columns; all rows
/// of a file share the same extra column names.
pub struct RunRow {
    pub run: usize,
    pub method: String,
    pub w: String,
    pub sigma: String,
    pub tau: String,
    pub iters: usize,
    pub pdes: usize,
    pub matvecs: usize,
    pub dist: f64,
    pub grad: f64,
    pub t_pdes: f64,
    pub t_q: f64,
    pub t_f: f64,
    pub t_ls: f64,
    pub t_total: f64,
    pub status: Status,
    pub extra: Vec<(&'static str, String)>,
}

impl RunRow {
    fn from_report(run: usize, planned: &PlannedRun, report: &SolveReport) -> Self {
        let c = &report.counters;
        RunRow {
            run,
            method: planned.label.clone(),
            w: planned.w.clone(),
            sigma: planned.sigma.clone(),
            tau: planned.tau.clone(),
            iters: report.iterations,
            pdes: c.pdes,
            matvecs: c.matvecs,
            dist: report.dist,
            grad: report.rel_grad(),
            t_pdes: c.t_pdes,
            t_q: c.t_q,
            t_f: c.t_f,
            t_ls: c.t_ls,
            t_total: report.wall_time,
            status: report.status,
            extra: Vec::new(),
        }
    }

    fn csv_line(&self) -> String {
        let mut line = format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run,
            self.method,
            self.w,
            self.sigma,
            self.tau,
            self.iters,
            self.pdes,
            self.matvecs,
            sci(self.dist),
            sci(self.grad),
            sci(self.t_pdes),
            sci(self.t_q),
            sci(self.t_f),
            sci(self.t_ls),
            sci(self.t_total),
            self.status.label(),
        );
        for (_, value) in &self.extra {
            let _ = write!(line, ",{value}");
        }
        line
    }
}

fn write_csv(path: &Path, rows: &[RunRow]) -> Result<()> {
    let mut text = String::from(BASE_HEADER);
    if let Some(first) = rows.first() {
        for (name, _) in &first.extra {
            let _ = write!(text, ",{name}");
        }
    }
    text.push('\n');
    for row in rows {
        text.push_str(&row.csv_line());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Pointwise statistics of the deformation-gradient determinant, the
/// diffeomorphism diagnostic written next to each run's field files.
#[derive(Serialize, Deserialize, Debug, Clone, Copy)]
pub struct DetStats {
    pub min: f64,
    pub mean: f64,
    pub max: f64,
    pub std: f64,
}

impl DetStats {
    fn from_field(det: &ScalarField) -> Self {
        let vals = det.values();
        let n = vals.len() as f64;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut sum = 0.0;
        for &v in vals {
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        let mean = sum / n;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        DetStats {
            min,
            mean,
            max,
            std: var.sqrt(),
        }
    }
}

/// Write the final state, its pointwise mismatch against the target, the
/// backward flow map, and the deformation-gradient determinant with a JSON
/// stats sidecar. Returns the stats for callers that gate on them.
pub fn emit_diagnostics(spec: &ProblemSpec, v: &VectorField, dir: &Path) -> Result<DetStats> {
    fs::create_dir_all(dir)?;
    let with_path = |e: Error, name: &str| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", dir.join(name).display())),
        other => other,
    };
    let state = forward_trajectory(spec, v);
    save_scalar(dir.join("state_final.f2d"), state.last())
        .map_err(|e| with_path(e, "state_final.f2d"))?;
    let mut residual = state.last().clone();
    for (r, t) in residual.values_mut().iter_mut().zip(spec.m1().values()) {
        *r = (*r - *t).abs();
    }
    save_scalar(dir.join("residual.f2d"), &residual).map_err(|e| with_path(e, "residual.f2d"))?;
    let y = compute_flow_map(v);
    save_vector(dir.join("flow_map.f2d"), &y).map_err(|e| with_path(e, "flow_map.f2d"))?;
    let det = det_deformation_gradient(&y);
    save_scalar(dir.join("det_grad.f2d"), &det).map_err(|e| with_path(e, "det_grad.f2d"))?;
    let stats = DetStats::from_field(&det);
    let json = serde_json::to_string_pretty(&stats)
        .expect("plain float struct serializes")
        + "\n";
    fs::write(dir.join("det_stats.json"), json)?;
    Ok(stats)
}

/// Everything a run of a config produces: rows as written, the raw solver
/// reports in the same order, and the CSV location.
pub struct HarnessOutcome {
    pub rows: Vec<RunRow>,
    pub reports: Vec<SolveReport>,
    pub csv: PathBuf,
}

impl HarnessOutcome {
    /// Whether any row stagnated, the condition the CLI's strict mode
    /// turns into a failing exit code.
    pub fn any_stagnated(&self) -> bool {
        self.rows.iter().any(|r| r.status == Status::Stagnated)
    }
}

fn emit_run_diagnostics(
    cfg: &ExperimentConfig,
    spec: &ProblemSpec,
    out: &Path,
    rows: &[RunRow],
    reports: &[SolveReport],
) -> Result<()> {
    if !cfg.diagnostics {
        return Ok(());
    }
    for (row, report) in rows.iter().zip(reports) {
        emit_diagnostics(spec, &report.v, &out.join(format!("run_{:03}", row.run)))?;
    }
    Ok(())
}

/// Run every planned cell on the configured problem and write `runs.csv`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
) -> Result<HarnessOutcome> {
    let planned = plan_runs(cfg)?;
    let spec = build_problem(cfg, cfg.n, cfg.nt, cfg.gamma, cfg.alpha, seed)?;
    let stop = StopCriteria::new(cfg.eps, cfg.n_iter)?;
    fs::create_dir_all(out)?;
    let reports = execute(&spec, &stop, &planned)?;
    let rows: Vec<RunRow> = reports
        .iter()
        .zip(&planned)
        .enumerate()
        .map(|(i, (report, p))| RunRow::from_report(i + 1, p, report))
        .collect();
    let csv = out.join("runs.csv");
    write_csv(&csv, &rows)?;
    emit_run_diagnostics(cfg, &spec, out, &rows, &reports)?;
    Ok(HarnessOutcome { rows, reports, csv })
}

/// Run the method grid once per penalty weight and write `sweep_alpha.csv`
/// with `alpha` and `speedup` columns appended. Speedup is the best wall
/// time among the block's baseline rows divided by the row's wall time, so
/// a lone baseline row reads exactly 1.
pub fn run_sweep_alpha(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
) -> Result<HarnessOutcome> {
    let sweep = cfg
        .alpha_sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no alpha_sweep section".into()))?;
    if sweep.values.is_empty() {
        return Err(Error::Config("empty alpha_sweep values".into()));
    }
    let planned = plan_runs(cfg)?;
    let baseline = sweep
        .baseline
        .clone()
        .unwrap_or_else(|| planned[0].label.clone());
    if !planned.iter().any(|p| p.label == baseline) {
        return Err(Error::Config(format!(
            "baseline {baseline:?} matches no planned method"
        )));
    }
    let stop = StopCriteria::new(cfg.eps, cfg.n_iter)?;
    fs::create_dir_all(out)?;
    let mut rows: Vec<RunRow> = Vec::new();
    let mut all_reports = Vec::new();
    for &alpha in &sweep.values {
        let spec = build_problem(cfg, cfg.n, cfg.nt, cfg.gamma, alpha, seed)?;
        let reports = execute(&spec, &stop, &planned)?;
        let base_tts = reports
            .iter()
            .zip(&planned)
            .filter(|(_, p)| p.label == baseline)
            .map(|(r, _)| r.wall_time)
            .fold(f64::INFINITY, f64::min);
        let mut block_rows = Vec::with_capacity(reports.len());
        for (report, p) in reports.iter().zip(&planned) {
            let mut row = RunRow::from_report(rows.len() + block_rows.len() + 1, p, report);
            row.extra = vec![
                ("alpha", sci(alpha)),
                ("speedup", sci(base_tts / report.wall_time)),
            ];
            block_rows.push(row);
        }
        emit_run_diagnostics(cfg, &spec, out, &block_rows, &reports)?;
        rows.extend(block_rows);
        all_reports.extend(reports);
    }
    let csv = out.join("sweep_alpha.csv");
    write_csv(&csv, &rows)?;
    Ok(HarnessOutcome {
        rows,
        reports: all_reports,
        csv,
    })
}

/// Run the method grid across resolutions under one or both smoothing
/// policies and write `sweep_mesh.csv` with `n`, `nt`, `gamma`, and
/// `policy` columns appended. Time steps pair with resolution as
/// `nt = n / 16`; the scaled policy grows gamma proportionally to the
/// resolution, anchored at the coarsest listed grid, so the smoothed
/// endpoints agree across levels.
pub fn run_mesh_sweep(
    cfg: &ExperimentConfig,
    out: &Path,
    seed: Option<u64>,
) -> Result<HarnessOutcome> {
    let sweep = cfg
        .mesh_sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no mesh_sweep section".into()))?;
    if sweep.resolutions.is_empty() {
        return Err(Error::Config("empty mesh_sweep resolutions".into()));
    }
    for &n in &sweep.resolutions {
        if n == 0 || n % 16 != 0 {
            return Err(Error::Config(format!(
                "mesh resolution {n} is not a positive multiple of 16"
            )));
        }
    }
    let policies: Vec<String> = match &sweep.policies {
        None => vec!["fixed".into(), "scaled".into()],
        Some(list) if list.is_empty() => {
            return Err(Error::Config("empty mesh_sweep policies".into()))
        }
        Some(list) => {
            for p in list {
                if p != "fixed" && p != "scaled" {
                    return Err(Error::Config(format!(
                        "unknown policy {p:?}; expected fixed or scaled"
                    )));
                }
            }
            list.clone()
        }
    };
    let n_min = *sweep.resolutions.iter().min().unwrap();
    let planned = plan_runs(cfg)?;
    let stop = StopCriteria::new(cfg.eps, cfg.n_iter)?;
    fs::create_dir_all(out)?;
    let mut rows: Vec<RunRow> = Vec::new();
    let mut all_reports = Vec::new();
    for policy in &policies {
        for &n in &sweep.resolutions {
            let nt = n / 16;
            let gamma = if policy == "scaled" {
                cfg.gamma * (n as f64 / n_min as f64)
            } else {
                cfg.gamma
            };
            let spec = build_problem(cfg, n, nt, gamma, cfg.alpha, seed)?;
            let reports = execute(&spec, &stop, &planned)?;
            let mut block_rows = Vec::with_capacity(reports.len());
            for (report, p) in reports.iter().zip(&planned) {
                let mut row = RunRow::from_report(rows.len() + block_rows.len() + 1, p, report);
                row.extra = vec![
                    ("n", n.to_string()),
                    ("nt", nt.to_string()),
                    ("gamma", sci(gamma)),
                    ("policy", policy.clone()),
                ];
                block_rows.push(row);
            }
            emit_run_diagnostics(cfg, &spec, out, &block_rows, &reports)?;
            rows.extend(block_rows);
            all_reports.extend(reports);
        }
    }
    let csv = out.join("sweep_mesh.csv");
    write_csv(&csv, &rows)?;
    Ok(HarnessOutcome {
        rows,
        reports: all_reports,
        csv,
    })
}

/// Dispatch a loaded config to the runner its sections select: at most one
/// sweep, the plain experiment when none.
pub fn run_config(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> Result<HarnessOutcome> {
    match (&cfg.alpha_sweep, &cfg.mesh_sweep) {
        (Some(_), Some(_)) => Err(Error::Config(
            "config selects both alpha_sweep and mesh_sweep; pick one".into(),
        )),
        (Some(_), None) => run_sweep_alpha(cfg, out, seed),
        (None, Some(_)) => run_mesh_sweep(cfg, out, seed),
        (None, None) => run_experiment(cfg, out, seed),
    }
}
