//! Gelbrich ambiguity balls and the linearization oracle over them.
//!
//! The oracle maximizes `⟨Γ, L − Z⟩` over the floored ball
//! `{L ⪰ λ_min(Ẑ) I : G(L, Ẑ) ≤ ρ}`. The exact maximizer is
//! `L(γ) = γ² (γI − Γ)^{-1} Ẑ (γI − Γ)^{-1}` at the root `γ★ > λ_max(Γ)` of
//! the derivative of the dual function
//!
//! ```text
//! φ(γ) = γ (ρ² + ⟨γ(γI − Γ)^{-1} − I, Ẑ⟩) − ⟨Z, Γ⟩,
//! φ'(γ) = ρ² − ⟨Ẑ, Γ² (γI − Γ)^{-2}⟩.
//! ```
//!
//! Bisection on `φ'` stops at the first midpoint with `φ'(γ) > 0` (so `L(γ)`
//! is feasible) and `⟨L(γ) − Z, Γ⟩ ≥ δ φ(γ)`; weak duality then certifies a
//! `δ` fraction of the optimal improvement. Everything is evaluated in the
//! eigenbasis of `Γ`, where only the diagonal of `Ẑ` matters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{inner, min_eigenvalue, psd_sqrt, sym_eig, SymMatrix, PSD_REL_TOL};
use crate::system::{BlockId, CovarianceProfile};

/// Hard cap on bisection steps.
pub const MAX_BISECTION_ITERS: usize = 200;

/// Gelbrich (Bures–Wasserstein) distance between two PSD matrices.
pub fn gelbrich_distance(s1: &SymMatrix, s2: &SymMatrix) -> Result<f64> {
    if s1.dim() != s2.dim() {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", s1.dim(), s1.dim(), s2.dim(), s2.dim())));
    }
    let root2 = psd_sqrt(s2)?;
    psd_sqrt(s1)?;
    let cross = psd_sqrt(&SymMatrix::new(root2.as_matrix() * s1.as_matrix() * root2.as_matrix()))?;
    let sq = s1.trace() + s2.trace() - 2.0 * cross.trace();
    Ok(sq.max(0.0).sqrt())
}

/// `{Z ⪰ 0 : G(Z, center) ≤ radius, Z ⪰ floor·I}` with `floor = λ_min(center)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GelbrichBall {
    center: SymMatrix,
    radius: f64,
    floor: f64,
}

impl GelbrichBall {
    pub fn new(center: SymMatrix, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite()) {
            return Err(Error::InvalidInput(format!("radius must be finite and nonnegative, got {radius}")));
        }
        crate::linalg::check_psd(&center)?;
        let floor = min_eigenvalue(&center)?;
        Ok(GelbrichBall { center, radius, floor })
    }

    pub fn center(&self) -> &SymMatrix {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn dim(&self) -> usize {
        self.center.dim()
    }

    /// Membership up to an absolute tolerance on both constraints.
    pub fn contains(&self, z: &SymMatrix, tol: f64) -> bool {
        if z.dim() != self.dim() {
            return false;
        }
        let Ok(dist) = gelbrich_distance(z, &self.center) else {
            return false;
        };
        let Ok(lowest) = min_eigenvalue(z) else {
            return false;
        };
        dist <= self.radius + tol && lowest >= self.floor - tol
    }
}

/// Product of floored Gelbrich balls around a nominal profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguitySpec {
    pub nominal: CovarianceProfile,
    pub rho_x0: f64,
    pub rho_w: Vec<f64>,
    pub rho_v: Vec<f64>,
}

impl AmbiguitySpec {
    /// Same radius for every block.
    pub fn uniform(nominal: CovarianceProfile, rho: f64) -> Self {
        let horizon = nominal.horizon();
        AmbiguitySpec { nominal, rho_x0: rho, rho_w: vec![rho; horizon], rho_v: vec![rho; horizon] }
    }

    pub fn radius(&self, id: BlockId) -> f64 {
        match id {
            BlockId::X0 => self.rho_x0,
            BlockId::W(t) => self.rho_w[t],
            BlockId::V(t) => self.rho_v[t],
        }
    }

    /// Checks radii and that every nominal `V̂_t` is positive definite.
    pub fn validate(&self) -> Result<()> {
        let horizon = self.nominal.horizon();
        if self.nominal.v.len() != horizon || self.rho_w.len() != horizon || self.rho_v.len() != horizon {
            return Err(Error::DimensionMismatch("radii do not match the horizon".into()));
        }
        for id in CovarianceProfile::block_ids(horizon) {
            let rho = self.radius(id);
            if !(rho >= 0.0 && rho.is_finite()) {
                return Err(Error::InvalidInput(format!("radius of {id} must be finite and nonnegative, got {rho}")));
            }
        }
        for (t, v) in self.nominal.v.iter().enumerate() {
            if min_eigenvalue(v)? <= 0.0 {
                return Err(Error::NotPositiveDefinite { what: "nominal V", stage: t });
            }
        }
        Ok(())
    }

    /// Balls in canonical block order.
    pub fn balls(&self) -> Result<Vec<GelbrichBall>> {
        self.nominal
            .blocks()
            .map(|(id, center)| GelbrichBall::new(center.clone(), self.radius(id)))
            .collect()
    }

    /// Blocks of `cov` that fall outside their ball at tolerance `tol`.
    pub fn infeasible_blocks(&self, cov: &CovarianceProfile, tol: f64) -> Result<Vec<BlockId>> {
        let balls = self.balls()?;
        Ok(cov
            .blocks()
            .zip(&balls)
            .filter(|((_, z), ball)| !ball.contains(z, tol))
            .map(|((id, _), _)| id)
            .collect())
    }
}

/// Output of [`oracle_maximize`].
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub maximizer: SymMatrix,
    /// Final bisection point; `+∞` for the degenerate cases that return the
    /// center or the reference without bisecting.
    pub gamma: f64,
    /// `⟨Γ, L − Z⟩` for the returned `L`.
    pub gap_contribution: f64,
    pub iterations: usize,
}

/// Spectral data of `Γ` and `Ẑ` needed to evaluate `φ`, `φ'` and the
/// objective as scalar sums.
struct Secular {
    lambda: Vec<f64>,
    weight: Vec<f64>,
    rho_sq: f64,
    reference_value: f64,
}

impl Secular {
    fn dphi(&self, gamma: f64) -> f64 {
        self.rho_sq
            - self
                .lambda
                .iter()
                .zip(&self.weight)
                .map(|(&l, &z)| z * (l / (gamma - l)).powi(2))
                .sum::<f64>()
    }

    fn phi(&self, gamma: f64) -> f64 {
        let s: f64 = self.lambda.iter().zip(&self.weight).map(|(&l, &z)| z * l / (gamma - l)).sum();
        gamma * (self.rho_sq + s) - self.reference_value
    }

    /// `⟨Γ, L(γ) − Z⟩`
    fn gap(&self, gamma: f64) -> f64 {
        let s: f64 = self
            .lambda
            .iter()
            .zip(&self.weight)
            .map(|(&l, &z)| z * l / ((gamma - l) * (gamma - l)))
            .sum();
        gamma * gamma * s - self.reference_value
    }
}

/// Eigenvalues of `Γ` in `[−1e-9·‖Γ‖_F, 0)` are clamped to zero.
fn clamp_gradient(gradient: &SymMatrix) -> Result<crate::linalg::SymEigen> {
    let mut eig = sym_eig(gradient)?;
    let threshold = PSD_REL_TOL * gradient.frobenius_norm();
    if eig.min() < -threshold {
        return Err(Error::NotPsdGradient { min_eigenvalue: eig.min(), threshold });
    }
    eig.values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

/// Computes a `δ`-approximate maximizer of `⟨Γ, L − Z⟩` over `ball`.
pub fn oracle_maximize(
    ball: &GelbrichBall,
    gradient: &SymMatrix,
    reference: &SymMatrix,
    delta: f64,
) -> Result<OracleResult> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidInput(format!("oracle precision must lie in (0, 1), got {delta}")));
    }
    let d = ball.dim();
    if gradient.dim() != d || reference.dim() != d {
        return Err(Error::DimensionMismatch("oracle inputs have inconsistent dimensions".into()));
    }
    if ball.radius == 0.0 {
        return Ok(OracleResult { maximizer: ball.center.clone(), gamma: f64::INFINITY, gap_contribution: 0.0, iterations: 0 });
    }
    let eig = clamp_gradient(gradient)?;
    let lambda_max = eig.max();
    let unchanged = || OracleResult { maximizer: reference.clone(), gamma: f64::INFINITY, gap_contribution: 0.0, iterations: 0 };
    if lambda_max <= 0.0 {
        return Ok(unchanged());
    }
    let clamped = eig.map(|v| v);
    let reference_value = inner(clamped.as_matrix(), reference.as_matrix());
    let rotated = eig.vectors.transpose() * ball.center.as_matrix() * &eig.vectors;
    let weight: Vec<f64> = (0..d).map(|i| rotated[(i, i)].max(0.0)).collect();
    let trace: f64 = weight.iter().sum();
    let rho = ball.radius;

    if trace <= 0.0 {
        // Zero center: the ball is {L ⪰ 0 : Tr L ≤ ρ²}, maximized on the top eigenvector.
        let top = eig.vectors.column(d - 1);
        let maximizer = SymMatrix::new(top * top.transpose() * (rho * rho));
        let gap_contribution = rho * rho * lambda_max - reference_value;
        return Ok(OracleResult { maximizer, gamma: f64::INFINITY, gap_contribution, iterations: 0 });
    }

    let sec = Secular { lambda: eig.values.iter().copied().collect(), weight, rho_sq: rho * rho, reference_value };
    let build = |gamma: f64| -> SymMatrix {
        let mut scaled = eig.vectors.clone();
        for (j, &l) in sec.lambda.iter().enumerate() {
            scaled.column_mut(j).scale_mut(gamma / (gamma - l));
        }
        let m: DMatrix<f64> = scaled * eig.vectors.transpose();
        SymMatrix::new(&m * ball.center.as_matrix() * &m)
    };

    let mut lo = lambda_max * (1.0 + sec.weight[d - 1].sqrt() / rho);
    let mut hi = lambda_max * (1.0 + trace.sqrt() / rho);
    for iteration in 1..=MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        let slope = sec.dphi(mid);
        if slope > 0.0 && sec.gap(mid) >= delta * sec.phi(mid) {
            return Ok(OracleResult { maximizer: build(mid), gamma: mid, gap_contribution: sec.gap(mid), iterations: iteration });
        }
        if mid <= lo || mid >= hi {
            return Ok(exhausted(&sec, hi, delta, iteration, build, unchanged));
        }
        if slope < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BisectionCap { iterations: MAX_BISECTION_ITERS, lo, hi })
}

/// The bracket has shrunk to floating-point resolution around `γ★`. Step
/// just past it so `φ' > 0`; if the reference is already optimal to within
/// roundoff, keep it.
fn exhausted(
    sec: &Secular,
    hi: f64,
    delta: f64,
    iterations: usize,
    build: impl Fn(f64) -> SymMatrix,
    unchanged: impl Fn() -> OracleResult,
) -> OracleResult {
    let mut gamma = hi;
    let mut step = f64::EPSILON;
    while sec.dphi(gamma) <= 0.0 && step < 1e-6 {
        gamma = hi * (1.0 + step);
        step *= 2.0;
    }
    let gap = sec.gap(gamma);
    if sec.dphi(gamma) > 0.0 && (gap >= delta * sec.phi(gamma) || gap > 0.0) {
        OracleResult { maximizer: build(gamma), gamma, gap_contribution: gap, iterations }
    } else {
        OracleResult { iterations, ..unchanged() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> SymMatrix {
        SymMatrix::from_diagonal(&[v])
    }

    fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
        let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::new(&g * g.transpose() + DMatrix::identity(d, d) * 0.3)
    }

    #[test]
    fn distance_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_pd(&mut rng, 4);
        assert!(gelbrich_distance(&s, &s).unwrap() < 1e-7);
        for (a, b) in [(1.0, 4.0), (2.5, 0.3), (9.0, 9.0)] {
            let d = gelbrich_distance(&scalar(a), &scalar(b)).unwrap();
            assert!((d - (f64::sqrt(a) - f64::sqrt(b)).abs()).abs() < 1e-7);
        }
        let d = gelbrich_distance(&SymMatrix::from_diagonal(&[1.0, 4.0]), &SymMatrix::from_diagonal(&[4.0, 1.0])).unwrap();
        assert!((d - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn distance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (a, b) = (random_pd(&mut rng, 3), random_pd(&mut rng, 3));
            let (ab, ba) = (gelbrich_distance(&a, &b).unwrap(), gelbrich_distance(&b, &a).unwrap());
            assert!((ab - ba).abs() < 1e-9 * ab.max(1.0));
        }
    }

    #[test]
    fn distance_rejects_indefinite() {
        let bad = SymMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(gelbrich_distance(&bad, &SymMatrix::identity(2)).is_err());
    }

    #[test]
    fn contains_cases() {
        let ball = GelbrichBall::new(scalar(1.0), 1.0).unwrap();
        assert!(ball.contains(&scalar(1.0), 0.0));
        assert!(ball.contains(&scalar(4.0), 1e-12));
        assert!(!ball.contains(&scalar(4.5), 1e-9));
        assert!(!ball.contains(&scalar(0.9), 1e-9), "below floor");
        let zero = GelbrichBall::new(scalar(2.0), 0.0).unwrap();
        assert!(zero.contains(&scalar(2.0), 0.0));
    }

    #[test]
    fn scalar_closed_form() {
        let ball = GelbrichBall::new(scalar(1.0), 1.0).unwrap();
        let res = oracle_maximize(&ball, &scalar(1.0), &scalar(1.0), 0.95).unwrap();
        assert!((res.maximizer[(0, 0)] - 4.0).abs() < 1e-9);
        assert!((res.gap_contribution - 3.0).abs() < 1e-9);
        assert!((res.gamma - 2.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let z_hat = rng.random_range(0.1..5.0);
            let rho = rng.random_range(0.01..2.0);
            let c = rng.random_range(0.01..10.0);
            let ball = GelbrichBall::new(scalar(z_hat), rho).unwrap();
            let res = oracle_maximize(&ball, &scalar(c), &scalar(z_hat), 0.95).unwrap();
            let expect = (z_hat.sqrt() + rho).powi(2);
            assert!((res.maximizer[(0, 0)] - expect).abs() <= 1e-8 * expect);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let center = random_pd(&mut rng, 3);
        let ball = GelbrichBall::new(center.clone(), 0.5).unwrap();
        let reference = center.scale(1.01);
        let res = oracle_maximize(&ball, &SymMatrix::zeros(3), &reference, 0.95).unwrap();
        assert_eq!(res.maximizer, reference);
        assert_eq!(res.gap_contribution, 0.0);

        let point = GelbrichBall::new(center.clone(), 0.0).unwrap();
        let res = oracle_maximize(&point, &random_pd(&mut rng, 3), &center, 0.95).unwrap();
        assert_eq!(res.maximizer, center);
        assert_eq!(res.gap_contribution, 0.0);

        let neg = SymMatrix::from_diagonal(&[1.0, -0.5, 0.0]);
        assert!(matches!(oracle_maximize(&ball, &neg, &center, 0.95), Err(Error::NotPsdGradient { .. })));
        assert!(oracle_maximize(&ball, &SymMatrix::identity(3), &center, 1.0).is_err());
    }

    #[test]
    fn tiny_negative_gradient_eigenvalues_are_clamped() {
        let ball = GelbrichBall::new(SymMatrix::identity(2), 0.3).unwrap();
        let grad = SymMatrix::from_diagonal(&[1.0, -1e-12]);
        let res = oracle_maximize(&ball, &grad, &SymMatrix::identity(2), 0.95).unwrap();
        assert!(ball.contains(&res.maximizer, 1e-8));
    }

    #[test]
    fn zero_center_uses_top_eigenvector() {
        let ball = GelbrichBall::new(SymMatrix::zeros(2), 1.5).unwrap();
        let res = oracle_maximize(&ball, &SymMatrix::from_diagonal(&[1.0, 3.0]), &SymMatrix::zeros(2), 0.95).unwrap();
        assert!((res.maximizer[(1, 1)] - 2.25).abs() < 1e-12);
        assert!((res.gap_contribution - 6.75).abs() < 1e-12);
    }

    #[test]
    fn matrix_oracle_is_feasible_and_exits_correctly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let d = rng.random_range(1..=6);
            let center = random_pd(&mut rng, d);
            let rho = rng.random_range(0.01..1.5);
            let ball = GelbrichBall::new(center.clone(), rho).unwrap();
            let grad = random_pd(&mut rng, d);
            let res = oracle_maximize(&ball, &grad, &center, 0.95).unwrap();
            assert!(ball.contains(&res.maximizer, 1e-8));
            let scale = grad.frobenius_norm() * center.frobenius_norm();
            assert!(res.gap_contribution >= -1e-9 * scale);
            // φ'(γ) > 0 at the returned point, recomputed from dense matrices.
            let shifted = SymMatrix::new(DMatrix::identity(d, d) * res.gamma - grad.as_matrix());
            let inv = crate::linalg::spd_solve(&shifted, &DMatrix::identity(d, d)).unwrap();
            let weight = grad.as_matrix() * &inv;
            let slope = rho * rho - inner(center.as_matrix(), &(weight.transpose() * &weight));
            assert!(slope > -1e-12 * rho * rho, "slope {slope} gamma {} rho {rho} it {}", res.gamma, res.iterations);
        }
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let d = 4;
            let center = random_pd(&mut rng, d);
            let grad = random_pd(&mut rng, d);
            let eig = sym_eig(&grad).unwrap();
            let rotated = eig.vectors.transpose() * center.as_matrix() * &eig.vectors;
            let sec = Secular {
                lambda: eig.values.iter().copied().collect(),
                weight: (0..d).map(|i| rotated[(i, i)]).collect(),
                rho_sq: 0.25,
                reference_value: inner(grad.as_matrix(), center.as_matrix()),
            };
            let gamma = eig.max() * rng.random_range(1.2..3.0);
            let h = 1e-6 * gamma;
            let fd = (sec.phi(gamma + h) - sec.phi(gamma - h)) / (2.0 * h);
            assert!((fd - sec.dphi(gamma)).abs() <= 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn reference_at_optimum_returns_small_gap() {
        let ball = GelbrichBall::new(scalar(1.0), 0.1).unwrap();
        let optimum = scalar(1.21);
        let res = oracle_maximize(&ball, &scalar(2.0), &optimum, 0.95).unwrap();
        assert!(res.gap_contribution.abs() <= 1e-12);
        assert!(ball.contains(&res.maximizer, 1e-8));
    }

    #[test]
    fn spec_validation() {
        let nominal = CovarianceProfile {
            x0: SymMatrix::identity(2),
            w: vec![SymMatrix::identity(2)],
            v: vec![SymMatrix::from_diagonal(&[1.0, 0.0])],
        };
        let spec = AmbiguitySpec::uniform(nominal, 0.1);
        assert!(matches!(spec.validate(), Err(Error::NotPositiveDefinite { stage: 0, .. })));
        let mut ok = spec.clone();
        ok.nominal.v[0] = SymMatrix::identity(2);
        ok.validate().unwrap();
        ok.rho_w[0] = -1.0;
        assert!(ok.validate().is_err());
    }
}
