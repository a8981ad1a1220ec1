//! Command-line front end: `generate`, `solve`, `evaluate`, `verify`.
//!
//! Exit codes: 0 success, 1 I/O or numerical failure, 2 solver hit the
//! iteration cap, 3 invalid input, 4 verification failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::files::{read_bundle, read_controller, read_covariance, write_bundle};
use crate::frank_wolfe::{solve_with_observer, FwConfig, SolveStatus};
use crate::instance::{generate, load_problem};
use crate::lqg::{lqg_value, KalmanPolicy};
use crate::saddle::saddle_check;
use crate::simulate::monte_carlo_cost;
use crate::stacked::{build_stacked, controller_cost_trace, output_to_purified, unroll_gains};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_INVALID_INPUT: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

/// Monte Carlo disagreement threshold in standard errors.
const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "drlqg", version, about = "Distributionally robust LQG control with Gelbrich ambiguity sets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a seeded benchmark instance.
    Generate {
        #[arg(long, default_value_t = 10)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        m: usize,
        #[arg(long, default_value_t = 10)]
        p: usize,
        /// Horizon T.
        #[arg(long, short = 'T', default_value_t = 10)]
        horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Radius of every ambiguity ball.
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        /// Instance file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run Frank-Wolfe and write worst_case.json, controller.json, trace.csv, summary.json.
    Solve {
        instance: PathBuf,
        /// Result directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
        #[arg(long, default_value_t = 0.95)]
        delta: f64,
        #[arg(long, default_value_t = 1000)]
        max_iter: usize,
        /// Oracle worker threads; 1 runs serially, 0 uses all cores.
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Exact and Monte Carlo cost of a controller under given covariances.
    Evaluate {
        instance: PathBuf,
        #[arg(long)]
        controller: PathBuf,
        /// Covariance file; defaults to the nominal covariances.
        #[arg(long)]
        covariance: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Audit a result directory: feasibility, stored values and the saddle property.
    Verify {
        instance: PathBuf,
        result_dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) | Error::File { .. } | Error::Singular(_) | Error::BisectionCap { .. } | Error::NotPsdGradient { .. } => EXIT_FAILURE,
        _ => EXIT_INVALID_INPUT,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_INVALID_INPUT;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match execute(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Generate { n, m, p, horizon, seed, rho, out: path } => {
            generate(n, m, p, horizon, seed, rho)?.write(&path)?;
            writeln!(out, "wrote {}", path.display())?;
            Ok(EXIT_OK)
        }
        Command::Solve { instance, out: dir, tol, delta, max_iter, threads } => {
            let problem = load_problem(&instance)?;
            let cfg = FwConfig { delta, tol, max_iter, parallel_oracles: threads != 1 };
            cfg.validate()?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot start {threads} threads: {e}")))?;
            let sol = pool.install(|| solve_with_observer(&problem.system, &problem.ambiguity, &cfg, |_, _| {}))?;
            write_bundle(&dir, &problem.system, &sol, &cfg)?;
            writeln!(
                out,
                "{}: {} iterations, f = {:.12e}, gap = {:.3e}, results in {}",
                sol.status.as_str(),
                sol.trace.len(),
                sol.f_value,
                sol.final_gap,
                dir.display()
            )?;
            Ok(match sol.status {
                SolveStatus::Converged => EXIT_OK,
                SolveStatus::MaxIterations => EXIT_NOT_CONVERGED,
            })
        }
        Command::Evaluate { instance, controller, covariance, rollouts, seed } => {
            let problem = load_problem(&instance)?;
            let sys = &problem.system;
            let gains = read_controller(&controller, sys)?;
            let cov = match covariance {
                Some(path) => read_covariance(&path, sys)?,
                None => problem.ambiguity.nominal.clone(),
            };
            let st = build_stacked(sys);
            let purified = output_to_purified(&unroll_gains(sys, &gains)?, &st)?;
            let exact = controller_cost_trace(&st, &purified, &cov)?;
            let est = monte_carlo_cost(sys, &mut KalmanPolicy::from_gains(sys, &gains), &cov, rollouts, seed)?;
            writeln!(out, "exact cost:       {exact:.12e}")?;
            writeln!(out, "monte carlo mean: {:.12e} +/- {:.3e} ({} rollouts)", est.mean, est.std_err, est.samples)?;
            if est.agrees_with(exact, MC_SIGMAS) {
                writeln!(out, "agreement within {MC_SIGMAS} standard errors")?;
                Ok(EXIT_OK)
            } else {
                let z = (est.mean - exact) / est.std_err;
                writeln!(out, "DISAGREEMENT: mean is {z:.2} standard errors from the exact cost")?;
                Ok(EXIT_VERIFY_FAILED)
            }
        }
        Command::Verify { instance, result_dir, samples, seed } => {
            let problem = load_problem(&instance)?;
            let sys = &problem.system;
            let bundle = read_bundle(&result_dir, sys)?;
            let sol = &bundle.solution;
            let mut problems = Vec::new();

            let value = lqg_value(sys, &sol.worst_case)?;
            if (value - sol.f_value).abs() > 1e-8 * value.abs().max(1.0) {
                problems.push(format!("summary f_value {:.12e} differs from recomputed {value:.12e}", sol.f_value));
            }
            let assembled = sol.controller.gains();
            let gain_err = assembled
                .k
                .iter()
                .zip(&bundle.stored_gains.k)
                .chain(assembled.l.iter().zip(&bundle.stored_gains.l))
                .map(|(a, b)| (a - b).amax() / a.amax().max(1.0))
                .fold(0.0, f64::max);
            if gain_err > 1e-8 {
                problems.push(format!("stored controller differs from the worst-case LQG controller by {gain_err:.3e}"));
            }
            if sol.status != SolveStatus::Converged {
                problems.push(format!("solver status is {}", sol.status.as_str()));
            }
            let report = saddle_check(sys, &problem.ambiguity, sol, samples, seed)?;
            problems.extend(report.infeasible.iter().map(|id| format!("worst-case block {id} lies outside its ball")));
            problems.extend(report.violations.iter().map(|v| v.to_string()));

            writeln!(out, "f* = {:.12e}", report.f_star)?;
            writeln!(out, "nature:     max cost {:.12e} (bound {:.12e})", report.nature_max, report.nature_bound)?;
            writeln!(out, "controller: min cost {:.12e} (bound {:.12e})", report.controller_min, report.controller_bound)?;
            if problems.is_empty() {
                writeln!(out, "PASS")?;
                Ok(EXIT_OK)
            } else {
                for p in &problems {
                    writeln!(out, "violation: {p}")?;
                }
                writeln!(out, "FAIL: {} violation(s)", problems.len())?;
                Ok(EXIT_VERIFY_FAILED)
            }
        }
    }
}
