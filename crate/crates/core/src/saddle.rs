//! Numerical audit of the saddle-point property of a Frank-Wolfe solution.
//!
//! Nature side: no feasible covariance profile may raise the cost of the
//! returned controller by more than the certified gap allows. Controller
//! side: no causal linear perturbation of the controller may lower its cost
//! under the least-favorable covariances.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::ambiguity::{oracle_maximize, AmbiguitySpec};
use crate::error::Result;
use crate::frank_wolfe::RobustSolution;
use crate::gradient::grad_f;
use crate::linalg::SymMatrix;
use crate::stacked::{build_stacked, controller_cost_trace, output_to_purified, unroll_gains, LinearPurifiedController};
use crate::system::{BlockId, CovarianceProfile, TimeVaryingSystem};

/// Precision used when sampling boundary points through the oracle.
const SAMPLING_DELTA: f64 = 0.999;
/// Feasibility tolerance for the audited worst case.
pub const FEASIBILITY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Nature,
    Controller,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub side: Side,
    pub sample: usize,
    pub cost: f64,
    pub bound: f64,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.side {
            Side::Nature => write!(f, "nature sample {}: cost {:.12e} exceeds bound {:.12e}", self.sample, self.cost, self.bound),
            Side::Controller => {
                write!(f, "controller sample {}: cost {:.12e} below bound {:.12e}", self.sample, self.cost, self.bound)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleReport {
    /// Cost of the returned controller under the returned covariances.
    pub f_star: f64,
    /// Upper bound checked on the nature side.
    pub nature_bound: f64,
    /// Lower bound checked on the controller side.
    pub controller_bound: f64,
    /// Largest cost nature reached.
    pub nature_max: f64,
    /// Smallest cost a perturbed controller reached.
    pub controller_min: f64,
    pub violations: Vec<Violation>,
    /// Worst-case blocks outside their ball.
    pub infeasible: Vec<BlockId>,
}

impl SaddleReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.infeasible.is_empty()
    }

    pub fn violations_on(&self, side: Side) -> usize {
        self.violations.iter().filter(|v| v.side == side).count()
    }
}

fn random_psd<R: Rng>(rng: &mut R, d: usize) -> SymMatrix {
    let g = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
    SymMatrix::new(&g * g.transpose())
}

/// Feasible profile on the segment from the worst case to a random boundary
/// point of the ambiguity set.
fn sample_profile<R: Rng>(rng: &mut R, amb: &AmbiguitySpec, base: &CovarianceProfile) -> Result<CovarianceProfile> {
    let balls = amb.balls()?;
    let mut blocks = Vec::with_capacity(balls.len());
    for ((_, z), ball) in base.blocks().zip(&balls) {
        let direction = random_psd(rng, ball.dim());
        let edge = oracle_maximize(ball, &direction, ball.center(), SAMPLING_DELTA)?.maximizer;
        blocks.push(z.lerp(&edge, rng.random_range(0.0..=1.0)));
    }
    Ok(CovarianceProfile::from_blocks(base.horizon(), blocks))
}

/// Nature's best response to the returned controller: the cost is linear in
/// the covariances with gradient `∇f` at the worst case.
fn best_response(sys: &TimeVaryingSystem, amb: &AmbiguitySpec, sol: &RobustSolution) -> Result<CovarianceProfile> {
    let grad = grad_f(sys, &sol.worst_case)?;
    let balls = amb.balls()?;
    let blocks = grad
        .blocks()
        .zip(sol.worst_case.blocks())
        .zip(&balls)
        .map(|(((_, g), (_, z)), ball)| oracle_maximize(ball, g, z, SAMPLING_DELTA).map(|o| o.maximizer))
        .collect::<Result<Vec<_>>>()?;
    Ok(CovarianceProfile::from_blocks(sys.horizon(), blocks))
}

fn perturb<R: Rng>(rng: &mut R, ctrl: &LinearPurifiedController) -> LinearPurifiedController {
    let scale = 10f64.powf(rng.random_range(-3.0..0.0)) * (1.0 + ctrl.gain.to_dense().amax());
    let mut out = ctrl.clone();
    let horizon = out.gain.horizon();
    for t in 0..horizon {
        for s in 0..=t {
            out.gain.block_mut(t, s).iter_mut().for_each(|x| *x += scale * rng.sample::<f64, _>(StandardNormal));
        }
    }
    out.offset += DVector::from_fn(out.offset.len(), |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    out
}

/// Samples `n_samples` profiles on the nature side and `n_samples` controller
/// perturbations, and reports every sample that breaks the saddle inequalities.
///
/// Nature's allowance is `max(10·g, 1e-6·scale)` with `g` the smaller of the
/// certified gap and the configured tolerance, so a run stopped early is held
/// to the accuracy it was asked for. The first nature sample is the exact best
/// response, which makes the check sharp.
pub fn saddle_check(
    sys: &TimeVaryingSystem,
    amb: &AmbiguitySpec,
    sol: &RobustSolution,
    n_samples: usize,
    seed: u64,
) -> Result<SaddleReport> {
    let st = build_stacked(sys);
    let ctrl = output_to_purified(&unroll_gains(sys, &sol.controller.gains())?, &st)?;
    let f_star = controller_cost_trace(&st, &ctrl, &sol.worst_case)?;
    let scale = f_star.abs().max(1.0);
    let claimed = sol.final_gap.max(0.0).min(sol.tol);
    let nature_bound = f_star + (10.0 * claimed).max(1e-6 * scale);
    let controller_bound = f_star - 1e-9 * scale;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut violations = Vec::new();

    let mut nature_max = f64::NEG_INFINITY;
    for sample in 0..n_samples {
        let profile = if sample == 0 { best_response(sys, amb, sol)? } else { sample_profile(&mut rng, amb, &sol.worst_case)? };
        let cost = controller_cost_trace(&st, &ctrl, &profile)?;
        nature_max = nature_max.max(cost);
        if cost > nature_bound {
            violations.push(Violation { side: Side::Nature, sample, cost, bound: nature_bound });
        }
    }

    let mut controller_min = f64::INFINITY;
    for sample in 0..n_samples {
        let cost = controller_cost_trace(&st, &perturb(&mut rng, &ctrl), &sol.worst_case)?;
        controller_min = controller_min.min(cost);
        if cost < controller_bound {
            violations.push(Violation { side: Side::Controller, sample, cost, bound: controller_bound });
        }
    }

    Ok(SaddleReport {
        f_star,
        nature_bound,
        controller_bound,
        nature_max,
        controller_min,
        violations,
        infeasible: amb.infeasible_blocks(&sol.worst_case, FEASIBILITY_TOL)?,
    })
}
