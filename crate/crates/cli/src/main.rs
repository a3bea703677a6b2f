//! `topt`: run configured experiments, generate datasets, self-check.
//!
//! Exit codes: 0 on success, 1 when `--strict` sees a stagnated row (or a
//! self-check fails, or a run fails at solve time), 2 for config problems.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use topt_core::check::run_all;
use topt_core::harness::{
    load_config, resolve_out, run_config, DatasetEntry, DatasetSpec, HarnessOutcome,
};
use topt_core::io::{save_scalar, write_pgm};
use topt_core::{Error, GridSpec, ScalarField};

#[derive(Parser)]
#[command(name = "topt", version, about = "Transport-optimization workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment or sweep described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's `out` field.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for independent cells; defaults to all cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed override for the randomized dataset.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit nonzero when any row stagnates.
        #[arg(long)]
        strict: bool,
    },
    /// Write a dataset's endpoint images as field files plus PGM previews.
    Gen {
        /// rect, sinusoidal, gaussians, matched, or random.
        dataset: String,
        /// Spatial resolution; grids are square.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        /// Only meaningful for the random dataset.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the self-check suites and print one line per check.
    Check,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("topt: {err}");
            match err {
                Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, Error> {
    match cli.cmd {
        Cmd::Run {
            config,
            out,
            jobs,
            seed,
            strict,
        } => cmd_run(&config, out, jobs, seed, strict),
        Cmd::Gen {
            dataset,
            n,
            out,
            seed,
        } => cmd_gen(&dataset, n, &out, seed),
        Cmd::Check => cmd_check(),
    }
}

fn cmd_run(
    config: &PathBuf,
    out: Option<PathBuf>,
    jobs: Option<usize>,
    seed: Option<u64>,
    strict: bool,
) -> Result<ExitCode, Error> {
    let cfg = load_config(config)?;
    let out = resolve_out(&cfg, out)?;
    let outcome = match jobs {
        Some(jobs) => rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("--jobs {jobs}: {e}")))?
            .install(|| run_config(&cfg, &out, seed)),
        None => run_config(&cfg, &out, seed),
    }?;
    print_summary(&outcome);
    if strict && outcome.any_stagnated() {
        eprintln!("topt: stagnated rows with --strict");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(outcome: &HarnessOutcome) {
    for row in &outcome.rows {
        let hyper = if row.w.is_empty() {
            String::new()
        } else {
            format!("({};{},{})", row.w, row.sigma, row.tau)
        };
        println!(
            "{:>4}  {:<24} iters {:>5}  pdes {:>6}  dist {:.2e}  grad {:.2e}  {}",
            row.run,
            format!("{}{hyper}", row.method),
            row.iters,
            row.pdes,
            row.dist,
            row.grad,
            row.status.label(),
        );
    }
    println!("wrote {} ({} rows)", outcome.csv.display(), outcome.rows.len());
}

fn cmd_gen(dataset: &str, n: usize, out: &PathBuf, seed: Option<u64>) -> Result<ExitCode, Error> {
    let g = GridSpec::new(n, n, 1)?;
    let ds = DatasetSpec::Entry(DatasetEntry {
        kind: dataset.to_string(),
        seed,
        k_max: None,
        rolloff: None,
    });
    let (m0, m1) = topt_core::harness::build_dataset(&ds, g)?;
    std::fs::create_dir_all(out)?;
    for (name, field) in [("m0", &m0), ("m1", &m1)] {
        let path = out.join(format!("{name}.f2d"));
        save_scalar(&path, field)?;
        write_pgm(out.join(format!("{name}.pgm")), &preview(field))?;
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Previews clamp to [0, 1]; fields that overshoot get rescaled by their
/// peak so the preview stays informative.
fn preview(f: &ScalarField) -> ScalarField {
    let peak = f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let mut p = f.clone();
    if peak > 1.0 {
        for v in p.values_mut() {
            *v /= peak;
        }
    }
    p
}

fn cmd_check() -> Result<ExitCode, Error> {
    let outcomes = run_all();
    let mut all_passed = true;
    for o in &outcomes {
        let verdict = if o.passed { "PASS" } else { "FAIL" };
        println!("{verdict}  {}: {}", o.name, o.detail);
        all_passed &= o.passed;
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}
