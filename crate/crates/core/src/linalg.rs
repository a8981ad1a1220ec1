//! Dense symmetric and PSD matrix kernels.
//!
//! Every symmetric quantity in the crate lives in a [`SymMatrix`], which is
//! symmetrized as `(M + Mᵀ)/2` on construction. Eigenvalues slightly below
//! zero (down to `-PSD_REL_TOL·‖S‖_F`) are treated as roundoff and clamped.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative tolerance for treating tiny negative eigenvalues as zero.
pub const PSD_REL_TOL: f64 = 1e-9;

/// A dense real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes `m` as `(m + mᵀ)/2`. Panics if `m` is not square or empty.
    pub fn new(m: DMatrix<f64>) -> Self {
        assert!(m.is_square() && m.nrows() > 0, "SymMatrix requires a non-empty square matrix");
        let mut out = m;
        let d = out.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                let avg = 0.5 * (out[(i, j)] + out[(j, i)]);
                out[(i, j)] = avg;
                out[(j, i)] = avg;
            }
        }
        SymMatrix(out)
    }

    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::new(m))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        SymMatrix(DMatrix::zeros(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// `self + alpha·(other − self)`, the convex-combination step.
    pub fn lerp(&self, other: &SymMatrix, alpha: f64) -> SymMatrix {
        SymMatrix::new(&self.0 + (&other.0 - &self.0) * alpha)
    }

    pub fn scale(&self, s: f64) -> SymMatrix {
        SymMatrix(&self.0 * s)
    }

    pub fn add(&self, other: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &other.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SymMatrix> for DMatrix<f64> {
    fn from(s: SymMatrix) -> Self {
        s.0
    }
}

/// Eigendecomposition `S = V diag(λ) Vᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl SymEigen {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// Rebuilds `V diag(g(λ)) Vᵀ`.
    pub fn map(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let s = g(lam);
            scaled.column_mut(j).scale_mut(s);
        }
        SymMatrix::new(scaled * self.vectors.transpose())
    }
}

/// Symmetric eigendecomposition with ascending eigenvalues.
///
/// Each eigenvector is signed so that its largest-magnitude component is
/// positive (ties resolved toward the lowest index), which makes the output a
/// deterministic function of the input.
pub fn sym_eig(s: &SymMatrix) -> Result<SymEigen> {
    if !s.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let d = s.dim();
    let eig = SymmetricEigen::new(s.as_matrix().clone());

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]).then(i.cmp(&j)));

    let mut values = DVector::zeros(d);
    let mut vectors = DMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..d {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        vectors.column_mut(dst).copy_from(&(col * sign));
    }
    Ok(SymEigen { values, vectors })
}

pub fn min_eigenvalue(s: &SymMatrix) -> Result<f64> {
    Ok(sym_eig(s)?.min())
}

fn psd_threshold(s: &SymMatrix) -> f64 {
    PSD_REL_TOL * s.frobenius_norm()
}

/// Returns the eigendecomposition with eigenvalues in `[-tol·‖S‖_F, 0)`
/// clamped to zero, or a not-PSD error if any eigenvalue is more negative.
pub fn clamped_eig(s: &SymMatrix) -> Result<SymEigen> {
    let mut eig = sym_eig(s)?;
    let threshold = psd_threshold(s);
    if eig.min() < -threshold {
        return Err(Error::NotPsd { min_eigenvalue: eig.min(), threshold });
    }
    eig.values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(eig)
}

/// Checks numerical positive semidefiniteness.
pub fn check_psd(s: &SymMatrix) -> Result<()> {
    clamped_eig(s).map(|_| ())
}

/// Principal square root of a numerically PSD matrix.
pub fn psd_sqrt(s: &SymMatrix) -> Result<SymMatrix> {
    Ok(clamped_eig(s)?.map(f64::sqrt))
}

/// Projects onto the PSD cone after the tolerance check.
pub fn clamp_psd(s: &SymMatrix) -> Result<SymMatrix> {
    Ok(clamped_eig(s)?.map(|v| v))
}

/// Solves `S X = B` for symmetric positive definite `S` via Cholesky.
pub fn spd_solve(s: &SymMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != s.dim() {
        return Err(Error::DimensionMismatch(format!(
            "spd_solve: lhs is {}x{}, rhs has {} rows",
            s.dim(),
            s.dim(),
            b.nrows()
        )));
    }
    if !s.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    let chol = s
        .as_matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{}x{} matrix is not positive definite", s.dim(), s.dim())))?;
    Ok(chol.solve(b))
}

/// Frobenius inner product `⟨A, B⟩ = Tr(Aᵀ B)`.
pub fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

/// Block-diagonal assembly of square blocks.
pub fn block_diag<'a>(blocks: impl IntoIterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<&DMatrix<f64>> = blocks.into_iter().collect();
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// `A S Aᵀ`, re-symmetrized.
pub fn congruence(a: &DMatrix<f64>, s: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::new(a * s * a.transpose())
}
