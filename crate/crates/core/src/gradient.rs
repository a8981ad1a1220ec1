//! Gradient of the LQG value with respect to the noise covariances.
//!
//! Writing `S_t = Σ_{t|t−1}` and `S_0 = X0`, the value is
//! `f = Σ_{t<T} ⟨Q_t − P_t, Σ_t⟩ + Σ_{t≤T} ⟨P_t, S_t⟩`, where the Riccati
//! matrices `P_t` depend only on the plant. The reverse pass carries the
//! adjoints `S̄_t` and `Σ̄_t` back through the filter using
//! `dΣ_t = J dS_t Jᵀ` with `J = I − K̃_t C_t` and `dΣ_t = K̃_t dV_t K̃_tᵀ`,
//! where `K̃_t = S_t C_tᵀ (C_t S_t C_tᵀ + V_t)^{-1}` equals the filter gain `L_t`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{clamp_psd, congruence, SymMatrix};
use crate::lqg::{kalman_forward, lqg_value, lqg_value_from, riccati_backward};
use crate::system::{BlockId, CovarianceProfile, TimeVaryingSystem};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// `∂f/∂X0`, `∂f/∂W_t`, `∂f/∂V_t` as symmetric matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlocks {
    pub x0: SymMatrix,
    pub w: Vec<SymMatrix>,
    pub v: Vec<SymMatrix>,
}

impl GradientBlocks {
    pub fn block(&self, id: BlockId) -> &SymMatrix {
        match id {
            BlockId::X0 => &self.x0,
            BlockId::W(t) => &self.w[t],
            BlockId::V(t) => &self.v[t],
        }
    }

    pub fn blocks(&self) -> impl Iterator<Item = (BlockId, &SymMatrix)> {
        CovarianceProfile::block_ids(self.w.len()).into_iter().map(move |id| (id, self.block(id)))
    }

    /// Projects every block onto the PSD cone (roundoff-level negatives only).
    pub fn clamped(&self) -> Result<GradientBlocks> {
        Ok(GradientBlocks {
            x0: clamp_psd(&self.x0)?,
            w: self.w.iter().map(clamp_psd).collect::<Result<_>>()?,
            v: self.v.iter().map(clamp_psd).collect::<Result<_>>()?,
        })
    }

    /// Stacked Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.blocks().map(|(_, b)| b.frobenius_norm().powi(2)).sum::<f64>().sqrt()
    }

    /// Frobenius norm of `self − other` over all blocks.
    pub fn distance(&self, other: &GradientBlocks) -> f64 {
        self.blocks()
            .zip(other.blocks())
            .map(|((_, a), (_, b))| (a.as_matrix() - b.as_matrix()).norm_squared())
            .sum::<f64>()
            .sqrt()
    }
}

/// LQG value together with its covariance gradient.
pub fn value_and_grad(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<(f64, GradientBlocks)> {
    let riccati = riccati_backward(sys)?;
    let kalman = kalman_forward(sys, cov)?;
    let value = lqg_value_from(sys, &riccati, &kalman);
    let (n, horizon) = (sys.state_dim(), sys.horizon());

    let mut w = vec![SymMatrix::zeros(n); horizon];
    let mut v = vec![SymMatrix::zeros(sys.output_dim()); horizon];
    // Adjoint of S_T = Σ_{T|T−1}.
    let mut pred_bar = riccati.p[horizon].clone();
    for t in (0..horizon).rev() {
        w[t] = pred_bar.clone();
        let gain = &kalman.l[t];
        let filtered_bar = SymMatrix::new(
            sys.q(t).as_matrix() - riccati.p[t].as_matrix() + sys.a(t).transpose() * pred_bar.as_matrix() * sys.a(t),
        );
        v[t] = congruence(&gain.transpose(), &filtered_bar);
        let contraction = DMatrix::identity(n, n) - gain * sys.c(t);
        pred_bar = congruence(&contraction.transpose(), &filtered_bar).add(&riccati.p[t]);
    }
    Ok((value, GradientBlocks { x0: pred_bar, w, v }))
}

pub fn grad_f(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<GradientBlocks> {
    value_and_grad(sys, cov).map(|(_, g)| g)
}

/// Symmetric unit perturbation for entry `(i, j)`: `E_ii` on the diagonal,
/// `(E_ij + E_ji)/2` off it, so the central difference recovers `G_ij`.
fn unit_direction(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(d, d);
    if i == j {
        e[(i, i)] = 1.0;
    } else {
        e[(i, j)] = 0.5;
        e[(j, i)] = 0.5;
    }
    e
}

fn fd_block(sys: &TimeVaryingSystem, cov: &CovarianceProfile, id: BlockId, step: f64) -> Result<SymMatrix> {
    let d = cov.block(id).dim();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let dir = unit_direction(d, i, j);
            let eval = |h: f64| -> Result<f64> {
                let mut shifted = cov.clone();
                let block = shifted.block_mut(id);
                *block = SymMatrix::new(block.as_matrix() + &dir * h);
                if let BlockId::V(t) = id {
                    if block.as_matrix().clone().cholesky().is_none() {
                        return Err(Error::NotPositiveDefinite { what: "V", stage: t });
                    }
                }
                lqg_value(sys, &shifted)
            };
            let diff = |h: f64| -> Result<f64> { Ok((eval(h)? - eval(-h)?) / (2.0 * h)) };
            let g = match diff(step) {
                Err(Error::NotPositiveDefinite { .. }) => diff(step / 10.0)?,
                other => other?,
            };
            out[(i, j)] = g;
            out[(j, i)] = g;
        }
    }
    Ok(SymMatrix::new(out))
}

/// Central finite-difference gradient, entry by entry.
///
/// If a perturbed `V_t` loses definiteness the step is reduced tenfold once
/// before the error is returned.
pub fn fd_grad(sys: &TimeVaryingSystem, cov: &CovarianceProfile, step: f64) -> Result<GradientBlocks> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidInput(format!("finite-difference step must be positive, got {step}")));
    }
    let horizon = sys.horizon();
    Ok(GradientBlocks {
        x0: fd_block(sys, cov, BlockId::X0, step)?,
        w: (0..horizon).map(|t| fd_block(sys, cov, BlockId::W(t), step)).collect::<Result<_>>()?,
        v: (0..horizon).map(|t| fd_block(sys, cov, BlockId::V(t), step)).collect::<Result<_>>()?,
    })
}
