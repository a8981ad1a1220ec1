//! Plant, cost and noise-covariance data.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{check_psd, min_eigenvalue, SymMatrix};

/// Time-varying linear plant with quadratic stage costs over horizon `T`.
///
/// `x_{t+1} = A_t x_t + B_t u_t + w_t`, `y_t = C_t x_t + v_t`, with cost
/// `Σ_{t<T} (x_tᵀQ_t x_t + u_tᵀR_t u_t) + x_Tᵀ Q_T x_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeVaryingSystem {
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
    c: Vec<DMatrix<f64>>,
    q: Vec<SymMatrix>,
    r: Vec<SymMatrix>,
}

impl TimeVaryingSystem {
    /// Validates dimensions, `Q_t ⪰ 0` (up to roundoff) and `R_t ≻ 0`.
    pub fn new(
        a: Vec<DMatrix<f64>>,
        b: Vec<DMatrix<f64>>,
        c: Vec<DMatrix<f64>>,
        q: Vec<SymMatrix>,
        r: Vec<SymMatrix>,
    ) -> Result<Self> {
        let horizon = a.len();
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        let count = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::DimensionMismatch(format!("expected {want} {name} matrices, got {got}")))
            } else {
                Ok(())
            }
        };
        count("B", b.len(), horizon)?;
        count("C", c.len(), horizon)?;
        count("Q", q.len(), horizon + 1)?;
        count("R", r.len(), horizon)?;

        let n = a[0].nrows();
        let m = b[0].ncols();
        let p = c[0].nrows();
        if n == 0 || m == 0 || p == 0 {
            return Err(Error::InvalidInput("state, input and output dimensions must be positive".into()));
        }
        let shape = |name: &str, t: usize, got: (usize, usize), want: (usize, usize)| {
            if got != want {
                Err(Error::DimensionMismatch(format!(
                    "{name}[{t}] is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )))
            } else {
                Ok(())
            }
        };
        for t in 0..horizon {
            shape("A", t, a[t].shape(), (n, n))?;
            shape("B", t, b[t].shape(), (n, m))?;
            shape("C", t, c[t].shape(), (p, n))?;
            shape("R", t, r[t].shape(), (m, m))?;
        }
        for (t, qt) in q.iter().enumerate() {
            shape("Q", t, qt.shape(), (n, n))?;
        }
        let finite = a.iter().chain(&b).chain(&c).all(|mat| mat.iter().all(|v| v.is_finite()))
            && q.iter().chain(&r).all(SymMatrix::is_finite);
        if !finite {
            return Err(Error::InvalidInput("system matrices contain non-finite entries".into()));
        }
        for (t, qt) in q.iter().enumerate() {
            check_psd(qt).map_err(|e| Error::InvalidInput(format!("Q[{t}]: {e}")))?;
        }
        for (t, rt) in r.iter().enumerate() {
            if min_eigenvalue(rt)? <= 0.0 {
                return Err(Error::NotPositiveDefinite { what: "R", stage: t });
            }
        }
        Ok(TimeVaryingSystem { a, b, c, q, r })
    }

    pub fn horizon(&self) -> usize {
        self.a.len()
    }

    pub fn state_dim(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn a(&self, t: usize) -> &DMatrix<f64> {
        &self.a[t]
    }

    pub fn b(&self, t: usize) -> &DMatrix<f64> {
        &self.b[t]
    }

    pub fn c(&self, t: usize) -> &DMatrix<f64> {
        &self.c[t]
    }

    /// State cost for `t = 0..=T`.
    pub fn q(&self, t: usize) -> &SymMatrix {
        &self.q[t]
    }

    pub fn r(&self, t: usize) -> &SymMatrix {
        &self.r[t]
    }

    pub fn a_all(&self) -> &[DMatrix<f64>] {
        &self.a
    }

    pub fn b_all(&self) -> &[DMatrix<f64>] {
        &self.b
    }

    pub fn c_all(&self) -> &[DMatrix<f64>] {
        &self.c
    }

    pub fn q_all(&self) -> &[SymMatrix] {
        &self.q
    }

    pub fn r_all(&self) -> &[SymMatrix] {
        &self.r
    }
}

/// Identifies one covariance block. The canonical order is
/// `X0, W_0..W_{T−1}, V_0..V_{T−1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    X0,
    W(usize),
    V(usize),
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::X0 => write!(f, "x0"),
            BlockId::W(t) => write!(f, "w[{t}]"),
            BlockId::V(t) => write!(f, "v[{t}]"),
        }
    }
}

/// Second moments of the zero-mean exogenous noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceProfile {
    pub x0: SymMatrix,
    pub w: Vec<SymMatrix>,
    pub v: Vec<SymMatrix>,
}

impl CovarianceProfile {
    pub fn horizon(&self) -> usize {
        self.w.len()
    }

    /// Block identifiers in canonical order.
    pub fn block_ids(horizon: usize) -> Vec<BlockId> {
        std::iter::once(BlockId::X0)
            .chain((0..horizon).map(BlockId::W))
            .chain((0..horizon).map(BlockId::V))
            .collect()
    }

    pub fn block(&self, id: BlockId) -> &SymMatrix {
        match id {
            BlockId::X0 => &self.x0,
            BlockId::W(t) => &self.w[t],
            BlockId::V(t) => &self.v[t],
        }
    }

    pub fn block_mut(&mut self, id: BlockId) -> &mut SymMatrix {
        match id {
            BlockId::X0 => &mut self.x0,
            BlockId::W(t) => &mut self.w[t],
            BlockId::V(t) => &mut self.v[t],
        }
    }

    /// All blocks in canonical order.
    pub fn blocks(&self) -> impl Iterator<Item = (BlockId, &SymMatrix)> {
        Self::block_ids(self.horizon()).into_iter().map(move |id| (id, self.block(id)))
    }

    /// Rebuilds a profile from blocks given in canonical order.
    pub fn from_blocks(horizon: usize, blocks: Vec<SymMatrix>) -> Self {
        assert_eq!(blocks.len(), 2 * horizon + 1);
        let mut it = blocks.into_iter();
        let x0 = it.next().unwrap();
        let w: Vec<_> = it.by_ref().take(horizon).collect();
        let v: Vec<_> = it.collect();
        CovarianceProfile { x0, w, v }
    }

    /// Checks shapes against `sys` and that every block is PSD.
    pub fn validate_for(&self, sys: &TimeVaryingSystem) -> Result<()> {
        let (n, p, horizon) = (sys.state_dim(), sys.output_dim(), sys.horizon());
        if self.w.len() != horizon || self.v.len() != horizon {
            return Err(Error::DimensionMismatch(format!(
                "covariance profile has {} W and {} V blocks, horizon is {horizon}",
                self.w.len(),
                self.v.len()
            )));
        }
        for (id, block) in self.blocks() {
            let want = if matches!(id, BlockId::V(_)) { p } else { n };
            if block.dim() != want {
                return Err(Error::DimensionMismatch(format!(
                    "covariance block {id} is {0}x{0}, expected {want}x{want}",
                    block.dim()
                )));
            }
            if !block.is_finite() {
                return Err(Error::InvalidInput(format!("covariance block {id} has non-finite entries")));
            }
            check_psd(block).map_err(|e| Error::InvalidInput(format!("covariance block {id}: {e}")))?;
        }
        Ok(())
    }
}
