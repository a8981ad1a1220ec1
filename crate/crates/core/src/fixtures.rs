//! Small reference instances used by tests, examples and the Python smoke test.

use nalgebra::DMatrix;
use rand::Rng;

use crate::linalg::SymMatrix;
use crate::system::{CovarianceProfile, TimeVaryingSystem};

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// Scalar plant with horizon 1 where every matrix equals one.
pub fn ones_system() -> TimeVaryingSystem {
    TimeVaryingSystem::new(
        vec![scalar(1.0)],
        vec![scalar(1.0)],
        vec![scalar(1.0)],
        vec![SymMatrix::identity(1); 2],
        vec![SymMatrix::identity(1)],
    )
    .expect("scalar ones system is valid")
}

/// Unit covariances matching [`ones_system`].
pub fn ones_profile() -> CovarianceProfile {
    CovarianceProfile {
        x0: SymMatrix::identity(1),
        w: vec![SymMatrix::identity(1)],
        v: vec![SymMatrix::identity(1)],
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0))
}

fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize, floor: f64) -> SymMatrix {
    let g = uniform(rng, d, d, 1.0);
    SymMatrix::new(&g * g.transpose() / d as f64 + DMatrix::identity(d, d) * floor)
}

/// Random well-conditioned system plus a random PD covariance profile.
pub fn random_instance<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
) -> (TimeVaryingSystem, CovarianceProfile) {
    let a = (0..horizon).map(|_| uniform(rng, n, n, 0.8)).collect();
    let b = (0..horizon).map(|_| uniform(rng, n, m, 1.0)).collect();
    let c = (0..horizon).map(|_| uniform(rng, p, n, 1.0)).collect();
    let q = (0..=horizon).map(|_| random_spd(rng, n, 0.0)).collect();
    let r = (0..horizon).map(|_| random_spd(rng, m, 0.3)).collect();
    let sys = TimeVaryingSystem::new(a, b, c, q, r).expect("random system is valid");
    let cov = random_profile(rng, n, p, horizon);
    (sys, cov)
}

pub fn random_profile<R: Rng + ?Sized>(rng: &mut R, n: usize, p: usize, horizon: usize) -> CovarianceProfile {
    CovarianceProfile {
        x0: random_spd(rng, n, 0.5),
        w: (0..horizon).map(|_| random_spd(rng, n, 0.2)).collect(),
        v: (0..horizon).map(|_| random_spd(rng, p, 0.5)).collect(),
    }
}
