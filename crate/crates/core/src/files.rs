//! Result bundles and the trace CSV.
//!
//! A bundle directory holds `worst_case.json`, `controller.json`,
//! `trace.csv` and `summary.json`. Every file is written to a temporary
//! sibling first and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frank_wolfe::{FwConfig, FwRecord, FwTrace, RobustSolution, SolveStatus};
use crate::instance::{from_rows, profile_from_rows, profile_to_rows, to_rows, MatrixRows, ProfileRows};
use crate::lqg::{assemble_controller, FeedbackGains};
use crate::stacked::unroll_gains;
use crate::system::{CovarianceProfile, TimeVaryingSystem};

pub const WORST_CASE_FILE: &str = "worst_case.json";
pub const CONTROLLER_FILE: &str = "controller.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_HEADER: [&str; 4] = ["iter", "f_value", "surrogate_gap", "elapsed_ms"];

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::File { path: path.display().to_string(), source }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(file_error(path))
}

/// Writes `bytes` to a temporary file next to `path` and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(file_error(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("result files serialize");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: format!("line {}, column {}: {e}", e.line(), e.column()),
    })
}

fn field_error(path: &Path, e: Error) -> Error {
    match e {
        Error::Io(_) | Error::File { .. } | Error::Parse { .. } => e,
        other => Error::Parse { path: path.display().to_string(), message: other.to_string() },
    }
}

/// Formats a float with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_to_csv(trace: &FwTrace) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_HEADER).expect("in-memory write");
    for r in &trace.records {
        w.write_record([r.iter.to_string(), format_float(r.f_value), format_float(r.surrogate_gap), format_float(r.elapsed_ms)])
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn trace_from_csv(bytes: &[u8], path: &str) -> Result<FwTrace> {
    let err = |message: String| Error::Parse { path: path.into(), message };
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(|e| err(e.to_string()))?;
    if header.iter().ne(TRACE_HEADER) {
        return Err(err(format!("line 1: expected header {}", TRACE_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| err(format!("line {line}: {e}")))?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| err(format!("line {line}, column {}: invalid number", TRACE_HEADER[i])))
        };
        let iter: usize = rec[0].trim().parse().map_err(|_| err(format!("line {line}, column iter: invalid integer")))?;
        if records.last().is_some_and(|r: &FwRecord| r.iter >= iter) {
            return Err(err(format!("line {line}: iteration numbers must increase")));
        }
        records.push(FwRecord { iter, f_value: num(1)?, surrogate_gap: num(2)?, elapsed_ms: num(3)? });
    }
    Ok(FwTrace { records })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    /// Control gains `u_t = K_t x̂_t`.
    pub k: Vec<MatrixRows>,
    /// Filter gains.
    pub l: Vec<MatrixRows>,
    /// Dense causal output-feedback matrix `U'` with `u = U' y`.
    pub output_gain: MatrixRows,
}

impl ControllerFile {
    pub fn new(sys: &TimeVaryingSystem, gains: &FeedbackGains) -> Result<Self> {
        Ok(ControllerFile {
            k: gains.k.iter().map(to_rows).collect(),
            l: gains.l.iter().map(to_rows).collect(),
            output_gain: to_rows(&unroll_gains(sys, gains)?.gain.to_dense()),
        })
    }

    pub fn gains(&self, sys: &TimeVaryingSystem) -> Result<FeedbackGains> {
        let (n, m, p, horizon) = (sys.state_dim(), sys.input_dim(), sys.output_dim(), sys.horizon());
        let list = |items: &[MatrixRows], name: &str, r: usize, c: usize| -> Result<Vec<DMatrix<f64>>> {
            if items.len() != horizon {
                return Err(Error::InvalidInput(format!("{name}: expected {horizon} matrices, found {}", items.len())));
            }
            items.iter().enumerate().map(|(t, x)| from_rows(x, r, c, &format!("{name}[{t}]"))).collect()
        };
        let gains = FeedbackGains { k: list(&self.k, "k", m, n)?, l: list(&self.l, "l", n, p)? };
        gains.validate_for(sys)?;
        Ok(gains)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryFile {
    pub status: String,
    pub iterations: usize,
    pub final_gap: f64,
    pub f_value: f64,
    pub tol: f64,
    pub delta: f64,
    pub max_iter: usize,
}

pub fn write_bundle(dir: &Path, sys: &TimeVaryingSystem, sol: &RobustSolution, cfg: &FwConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(file_error(dir))?;
    write_json(&dir.join(WORST_CASE_FILE), &profile_to_rows(&sol.worst_case))?;
    write_json(&dir.join(CONTROLLER_FILE), &ControllerFile::new(sys, &sol.controller.gains())?)?;
    write_atomic(&dir.join(TRACE_FILE), &trace_to_csv(&sol.trace))?;
    write_json(
        &dir.join(SUMMARY_FILE),
        &SummaryFile {
            status: sol.status.as_str().into(),
            iterations: sol.trace.len(),
            final_gap: sol.final_gap,
            f_value: sol.f_value,
            tol: sol.tol,
            delta: cfg.delta,
            max_iter: cfg.max_iter,
        },
    )
}

/// Reads a covariance file and checks it against `sys`.
pub fn read_covariance(path: &Path, sys: &TimeVaryingSystem) -> Result<CovarianceProfile> {
    let rows: ProfileRows = read_json(path)?;
    let cov = profile_from_rows(&rows, sys.state_dim(), sys.output_dim(), sys.horizon(), "")
        .and_then(|c| c.validate_for(sys).map(|_| c))
        .map_err(|e| field_error(path, e))?;
    Ok(cov)
}

pub fn write_covariance(path: &Path, cov: &CovarianceProfile) -> Result<()> {
    write_json(path, &profile_to_rows(cov))
}

pub fn read_controller(path: &Path, sys: &TimeVaryingSystem) -> Result<FeedbackGains> {
    let file: ControllerFile = read_json(path)?;
    file.gains(sys).map_err(|e| field_error(path, e))
}

pub fn read_summary(path: &Path) -> Result<SummaryFile> {
    read_json(path)
}

pub fn read_trace(path: &Path) -> Result<FwTrace> {
    trace_from_csv(&fs::read(path).map_err(file_error(path))?, &path.display().to_string())
}

/// A solution reloaded from disk, plus the controller gains as stored.
pub struct LoadedBundle {
    pub solution: RobustSolution,
    pub stored_gains: FeedbackGains,
}

pub fn read_bundle(dir: &Path, sys: &TimeVaryingSystem) -> Result<LoadedBundle> {
    let worst_case = read_covariance(&dir.join(WORST_CASE_FILE), sys)?;
    let stored_gains = read_controller(&dir.join(CONTROLLER_FILE), sys)?;
    let summary = read_summary(&dir.join(SUMMARY_FILE))?;
    let trace = read_trace(&dir.join(TRACE_FILE))?;
    let status = match summary.status.as_str() {
        "converged" => SolveStatus::Converged,
        "max_iterations" => SolveStatus::MaxIterations,
        other => {
            return Err(Error::Parse {
                path: dir.join(SUMMARY_FILE).display().to_string(),
                message: format!("status: unknown value \"{other}\""),
            })
        }
    };
    let controller = assemble_controller(sys, &worst_case)?;
    Ok(LoadedBundle {
        solution: RobustSolution {
            worst_case,
            controller,
            trace,
            final_gap: summary.final_gap,
            f_value: summary.f_value,
            status,
            tol: summary.tol,
        },
        stored_gains,
    })
}
