//! Frank-Wolfe over the product of floored Gelbrich balls.
//!
//! Each iteration linearizes the concave LQG value at the current profile,
//! asks every block's oracle for a `δ`-approximate maximizer, and moves
//! toward it with step `2/(2+k)`. The summed surrogate gap certifies
//! suboptimality and drives the stopping rule.

use std::time::Instant;

use rayon::prelude::*;

use crate::ambiguity::{oracle_maximize, AmbiguitySpec, GelbrichBall, OracleResult};
use crate::error::{Error, Result};
use crate::gradient::value_and_grad;
use crate::lqg::{assemble_controller, KalmanController};
use crate::system::{CovarianceProfile, TimeVaryingSystem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwConfig {
    /// Oracle precision in `(0, 1)`.
    pub delta: f64,
    /// Absolute threshold on the surrogate gap.
    pub tol: f64,
    pub max_iter: usize,
    /// Run the per-block oracles on the rayon pool.
    pub parallel_oracles: bool,
}

impl Default for FwConfig {
    fn default() -> Self {
        FwConfig { delta: 0.95, tol: 1e-3, max_iter: 1000, parallel_oracles: true }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidInput("max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the convergence trace, describing iterate `iter`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FwRecord {
    pub iter: usize,
    pub f_value: f64,
    pub surrogate_gap: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FwTrace {
    pub records: Vec<FwRecord>,
}

impl FwTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&FwRecord> {
        self.records.last()
    }

    /// Smallest gap seen so far.
    pub fn best_gap(&self) -> Option<f64> {
        self.records.iter().map(|r| r.surrogate_gap).reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// The iteration cap was hit; the solution holds the iterate with the
    /// smallest certified gap.
    MaxIterations,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIterations => "max_iterations",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RobustSolution {
    /// Least-favorable covariances.
    pub worst_case: CovarianceProfile,
    /// Optimal LQG controller for `worst_case`.
    pub controller: KalmanController,
    pub trace: FwTrace,
    /// Surrogate gap certified at `worst_case`.
    pub final_gap: f64,
    /// Value of the LQG problem at `worst_case`.
    pub f_value: f64,
    pub status: SolveStatus,
    /// Stopping threshold the run was configured with.
    pub tol: f64,
}

impl RobustSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// Linearization at `cov`: value, per-block oracle results in canonical order
/// and their summed gap.
pub struct Linearization {
    pub value: f64,
    pub oracles: Vec<OracleResult>,
    pub gap: f64,
}

/// Evaluates the value, the gradient and every block oracle at `cov`.
pub fn linearize(
    sys: &TimeVaryingSystem,
    balls: &[GelbrichBall],
    cov: &CovarianceProfile,
    delta: f64,
    parallel: bool,
) -> Result<Linearization> {
    let (value, grad) = value_and_grad(sys, cov)?;
    let jobs: Vec<_> = grad.blocks().zip(cov.blocks()).zip(balls).map(|(((_, g), (_, z)), ball)| (ball, g, z)).collect();
    let oracles: Vec<OracleResult> = if parallel {
        jobs.par_iter().map(|(ball, g, z)| oracle_maximize(ball, g, z, delta)).collect::<Result<_>>()?
    } else {
        jobs.iter().map(|(ball, g, z)| oracle_maximize(ball, g, z, delta)).collect::<Result<_>>()?
    };
    let gap = oracles.iter().map(|o| o.gap_contribution).sum();
    Ok(Linearization { value, oracles, gap })
}

pub fn solve(sys: &TimeVaryingSystem, amb: &AmbiguitySpec, cfg: &FwConfig) -> Result<RobustSolution> {
    solve_with_observer(sys, amb, cfg, |_, _| {})
}

/// Like [`solve`], calling `observer` with every trace row and its iterate.
pub fn solve_with_observer(
    sys: &TimeVaryingSystem,
    amb: &AmbiguitySpec,
    cfg: &FwConfig,
    mut observer: impl FnMut(&FwRecord, &CovarianceProfile),
) -> Result<RobustSolution> {
    cfg.validate()?;
    amb.validate()?;
    amb.nominal.validate_for(sys)?;
    let balls = amb.balls()?;
    let start = Instant::now();

    let mut trace = FwTrace::default();
    let mut iterate = amb.nominal.clone();
    let mut best: Option<(CovarianceProfile, f64, f64)> = None;
    let mut status = SolveStatus::MaxIterations;

    for k in 0..cfg.max_iter {
        let lin = linearize(sys, &balls, &iterate, cfg.delta, cfg.parallel_oracles)?;
        let record = FwRecord {
            iter: k,
            f_value: lin.value,
            surrogate_gap: lin.gap,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
        };
        trace.records.push(record);
        observer(&record, &iterate);

        if lin.gap <= cfg.tol {
            best = Some((iterate, lin.gap, lin.value));
            status = SolveStatus::Converged;
            break;
        }
        if best.as_ref().is_none_or(|(_, g, _)| lin.gap < *g) {
            best = Some((iterate.clone(), lin.gap, lin.value));
        }
        let alpha = 2.0 / (2.0 + k as f64);
        let targets: Vec<_> = lin.oracles.into_iter().map(|o| o.maximizer).collect();
        let next: Vec<_> = iterate.blocks().zip(&targets).map(|((_, z), l)| z.lerp(l, alpha)).collect();
        iterate = CovarianceProfile::from_blocks(sys.horizon(), next);
    }

    let (worst_case, final_gap, f_value) = best.expect("max_iter is positive");
    let controller = assemble_controller(sys, &worst_case)?;
    Ok(RobustSolution { worst_case, controller, trace, final_gap, f_value, status, tol: cfg.tol })
}
