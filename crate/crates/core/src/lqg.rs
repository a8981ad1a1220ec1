//! Finite-horizon LQG: Riccati backward pass, Kalman forward pass, the
//! optimal value and the separation-principle controller.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{congruence, inner, spd_solve, SymMatrix};
use crate::system::{CovarianceProfile, TimeVaryingSystem};

/// Cost-to-go matrices `P_0..P_T` and feedback gains `K_0..K_{T−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub p: Vec<SymMatrix>,
    pub k: Vec<DMatrix<f64>>,
}

/// Filtered covariances `Σ_t`, predicted covariances `Σ_{t|t−1}` for
/// `t = 0..=T` (with `Σ_{0|−1} = X0`), and filter gains `L_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanSolution {
    pub sigma: Vec<SymMatrix>,
    pub sigma_pred: Vec<SymMatrix>,
    pub l: Vec<DMatrix<f64>>,
}

pub fn riccati_backward(sys: &TimeVaryingSystem) -> Result<RiccatiSolution> {
    let horizon = sys.horizon();
    let mut p = vec![SymMatrix::zeros(sys.state_dim()); horizon + 1];
    let mut k = vec![DMatrix::zeros(sys.input_dim(), sys.state_dim()); horizon];
    p[horizon] = sys.q(horizon).clone();
    for t in (0..horizon).rev() {
        let (a, b) = (sys.a(t), sys.b(t));
        let next = p[t + 1].as_matrix();
        let pb = next * b;
        let gram = SymMatrix::new(sys.r(t).as_matrix() + b.transpose() * &pb);
        let rhs = pb.transpose() * a;
        let gain = spd_solve(&gram, &rhs)
            .map_err(|_| Error::Singular(format!("R + BᵀPB at stage {t}")))?;
        let at_p_a = a.transpose() * next * a;
        p[t] = SymMatrix::new(at_p_a + sys.q(t).as_matrix() - rhs.transpose() * &gain);
        k[t] = -gain;
    }
    Ok(RiccatiSolution { p, k })
}

/// Cholesky-checks every `V_t` and reports the first stage that fails.
pub(crate) fn check_observation_noise(cov: &CovarianceProfile) -> Result<()> {
    for (t, v) in cov.v.iter().enumerate() {
        if v.as_matrix().clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { what: "V", stage: t });
        }
    }
    Ok(())
}

pub fn kalman_forward(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<KalmanSolution> {
    cov.validate_for(sys)?;
    check_observation_noise(cov)?;
    let horizon = sys.horizon();
    let mut sigma = Vec::with_capacity(horizon);
    let mut sigma_pred = Vec::with_capacity(horizon + 1);
    let mut l = Vec::with_capacity(horizon);
    sigma_pred.push(cov.x0.clone());
    for t in 0..horizon {
        let c = sys.c(t);
        let s = sigma_pred[t].as_matrix();
        let sc = s * c.transpose();
        let innovation = SymMatrix::new(c * &sc + cov.v[t].as_matrix());
        let correction = spd_solve(&innovation, &sc.transpose())
            .map_err(|_| Error::NotPositiveDefinite { what: "innovation covariance", stage: t })?;
        let filtered = SymMatrix::new(s - &sc * correction);
        let gain = spd_solve(&cov.v[t], &(c * filtered.as_matrix()))
            .map_err(|_| Error::NotPositiveDefinite { what: "V", stage: t })?
            .transpose();
        let predicted = congruence(sys.a(t), &filtered).add(&cov.w[t]);
        sigma.push(filtered);
        l.push(gain);
        sigma_pred.push(predicted);
    }
    Ok(KalmanSolution { sigma, sigma_pred, l })
}

/// Optimal LQG value assembled from precomputed passes.
pub fn lqg_value_from(sys: &TimeVaryingSystem, riccati: &RiccatiSolution, kalman: &KalmanSolution) -> f64 {
    let horizon = sys.horizon();
    let mut total = inner(riccati.p[0].as_matrix(), kalman.sigma_pred[0].as_matrix());
    for t in 0..horizon {
        let gap = sys.q(t).as_matrix() - riccati.p[t].as_matrix();
        total += inner(&gap, kalman.sigma[t].as_matrix());
    }
    for t in 1..=horizon {
        total += inner(riccati.p[t].as_matrix(), kalman.sigma_pred[t].as_matrix());
    }
    total
}

/// Optimal expected cost of the LQG problem with noise covariances `cov`.
pub fn lqg_value(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<f64> {
    let riccati = riccati_backward(sys)?;
    let kalman = kalman_forward(sys, cov)?;
    Ok(lqg_value_from(sys, &riccati, &kalman))
}

/// Control gains `K_t` and filter gains `L_t` of a Kalman-based controller.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGains {
    pub k: Vec<DMatrix<f64>>,
    pub l: Vec<DMatrix<f64>>,
}

impl FeedbackGains {
    pub fn validate_for(&self, sys: &TimeVaryingSystem) -> Result<()> {
        let (n, m, p, horizon) = (sys.state_dim(), sys.input_dim(), sys.output_dim(), sys.horizon());
        if self.k.len() != horizon || self.l.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "controller has {} K and {} L gains, horizon is {horizon}",
                self.k.len(),
                self.l.len()
            )));
        }
        for t in 0..horizon {
            if self.k[t].shape() != (m, n) || self.l[t].shape() != (n, p) {
                return Err(Error::DimensionMismatch(format!("controller gains at stage {t} have wrong shape")));
            }
        }
        Ok(())
    }
}

/// Recursive controller `u_t = K_t x̂_t` driven by the MMSE estimator
/// `x̂_0 = L_0 y_0`, `x̂_{t+1} = x̄ + L_{t+1}(y_{t+1} − C_{t+1} x̄)` with
/// `x̄ = A_t x̂_t + B_t u_t`.
#[derive(Debug, Clone)]
pub struct KalmanController {
    pub system: TimeVaryingSystem,
    pub riccati: RiccatiSolution,
    pub kalman: KalmanSolution,
}

impl KalmanController {
    pub fn gains(&self) -> FeedbackGains {
        FeedbackGains { k: self.riccati.k.clone(), l: self.kalman.l.clone() }
    }

    /// Expected cost under the covariances the controller was built for.
    pub fn value(&self) -> f64 {
        lqg_value_from(&self.system, &self.riccati, &self.kalman)
    }

    pub fn policy(&self) -> KalmanPolicy<'_> {
        KalmanPolicy::new(&self.system, &self.riccati.k, &self.kalman.l)
    }
}

pub fn assemble_controller(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<KalmanController> {
    Ok(KalmanController {
        system: sys.clone(),
        riccati: riccati_backward(sys)?,
        kalman: kalman_forward(sys, cov)?,
    })
}

/// A causal feedback law queried once per stage, in order.
pub trait Policy {
    /// Clears internal state before a new rollout.
    fn reset(&mut self);
    /// Returns `u_t` given the current observation `y_t`.
    fn act(&mut self, t: usize, y: &DVector<f64>) -> DVector<f64>;
}

/// Running state of a [`KalmanController`] during a rollout.
pub struct KalmanPolicy<'a> {
    sys: &'a TimeVaryingSystem,
    k: &'a [DMatrix<f64>],
    l: &'a [DMatrix<f64>],
    last: Option<(DVector<f64>, DVector<f64>)>,
}

impl<'a> KalmanPolicy<'a> {
    pub fn new(sys: &'a TimeVaryingSystem, k: &'a [DMatrix<f64>], l: &'a [DMatrix<f64>]) -> Self {
        KalmanPolicy { sys, k, l, last: None }
    }

    pub fn from_gains(sys: &'a TimeVaryingSystem, gains: &'a FeedbackGains) -> Self {
        Self::new(sys, &gains.k, &gains.l)
    }
}

impl Policy for KalmanPolicy<'_> {
    fn reset(&mut self) {
        self.last = None;
    }

    fn act(&mut self, t: usize, y: &DVector<f64>) -> DVector<f64> {
        let estimate = match self.last.take() {
            None => &self.l[t] * y,
            Some((x_hat, u)) => {
                let prior = self.sys.a(t - 1) * x_hat + self.sys.b(t - 1) * u;
                let innovation = y - self.sys.c(t) * &prior;
                prior + &self.l[t] * innovation
            }
        };
        let u = &self.k[t] * &estimate;
        self.last = Some((estimate, u.clone()));
        u
    }
}
