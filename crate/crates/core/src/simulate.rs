//! Closed-loop rollouts and Monte Carlo cost estimation.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{psd_sqrt, SymMatrix};
use crate::lqg::Policy;
use crate::system::{CovarianceProfile, TimeVaryingSystem};

/// One realization of the exogenous uncertainties.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub x0: DVector<f64>,
    pub w: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

impl NoiseDraw {
    pub fn zeros(sys: &TimeVaryingSystem) -> Self {
        let (n, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
        NoiseDraw {
            x0: DVector::zeros(n),
            w: vec![DVector::zeros(n); horizon],
            v: vec![DVector::zeros(p); horizon],
        }
    }

    pub fn negated(&self) -> Self {
        NoiseDraw {
            x0: -&self.x0,
            w: self.w.iter().map(|w| -w).collect(),
            v: self.v.iter().map(|v| -v).collect(),
        }
    }

    fn check(&self, sys: &TimeVaryingSystem) -> Result<()> {
        let (n, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
        let ok = self.x0.len() == n
            && self.w.len() == horizon
            && self.v.len() == horizon
            && self.w.iter().all(|w| w.len() == n)
            && self.v.iter().all(|v| v.len() == p);
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("noise draw does not match system dimensions".into()))
        }
    }
}

/// State, input and observation trajectories with the realized cost.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub cost: f64,
}

pub fn simulate(sys: &TimeVaryingSystem, policy: &mut dyn Policy, noise: &NoiseDraw) -> Result<Rollout> {
    noise.check(sys)?;
    policy.reset();
    let horizon = sys.horizon();
    let mut x = Vec::with_capacity(horizon + 1);
    let mut u = Vec::with_capacity(horizon);
    let mut y = Vec::with_capacity(horizon);
    let mut cost = 0.0;
    x.push(noise.x0.clone());
    for t in 0..horizon {
        let yt = sys.c(t) * &x[t] + &noise.v[t];
        let ut = policy.act(t, &yt);
        if ut.len() != sys.input_dim() {
            return Err(Error::DimensionMismatch(format!("policy returned input of length {} at stage {t}", ut.len())));
        }
        cost += x[t].dot(&(sys.q(t).as_matrix() * &x[t])) + ut.dot(&(sys.r(t).as_matrix() * &ut));
        let next = sys.a(t) * &x[t] + sys.b(t) * &ut + &noise.w[t];
        x.push(next);
        u.push(ut);
        y.push(yt);
    }
    cost += x[horizon].dot(&(sys.q(horizon).as_matrix() * &x[horizon]));
    Ok(Rollout { x, u, y, cost })
}

/// Draws zero-mean Gaussian noise with the given covariances.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    x0: SymMatrix,
    w: Vec<SymMatrix>,
    v: Vec<SymMatrix>,
}

impl GaussianNoise {
    pub fn new(cov: &CovarianceProfile) -> Result<Self> {
        Ok(GaussianNoise {
            x0: psd_sqrt(&cov.x0)?,
            w: cov.w.iter().map(psd_sqrt).collect::<Result<_>>()?,
            v: cov.v.iter().map(psd_sqrt).collect::<Result<_>>()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        let mut draw = |root: &SymMatrix| -> DVector<f64> {
            let z = DVector::from_fn(root.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
            root.as_matrix() * z
        };
        NoiseDraw {
            x0: draw(&self.x0),
            w: self.w.iter().map(&mut draw).collect(),
            v: self.v.iter().map(&mut draw).collect(),
        }
    }
}

/// Sample mean of the rollout cost with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

impl CostEstimate {
    /// Whether `exact` lies within `k` standard errors of the mean.
    pub fn agrees_with(&self, exact: f64, k: f64) -> bool {
        (self.mean - exact).abs() <= k * self.std_err
    }
}

/// Monte Carlo estimate of the expected closed-loop cost.
pub fn monte_carlo_cost(
    sys: &TimeVaryingSystem,
    policy: &mut dyn Policy,
    cov: &CovarianceProfile,
    samples: usize,
    seed: u64,
) -> Result<CostEstimate> {
    if samples < 2 {
        return Err(Error::InvalidInput("need at least two rollouts".into()));
    }
    cov.validate_for(sys)?;
    let noise = GaussianNoise::new(cov)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    // Welford accumulation
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..samples {
        let cost = simulate(sys, policy, &noise.sample(&mut rng))?.cost;
        let delta = cost - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (cost - mean);
    }
    let variance = m2 / (samples - 1) as f64;
    Ok(CostEstimate { mean, std_err: (variance / samples as f64).sqrt(), samples })
}
