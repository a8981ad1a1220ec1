//! Stacked (whole-horizon) representation of the plant and of causal linear
//! controllers, in both purified-observation and raw-observation form.
//!
//! With `x = (x_0..x_T)`, `u = (u_0..u_{T−1})`, `w = (x_0, w_0..w_{T−1})`
//! and `v = (v_0..v_{T−1})` the closed loop reads `x = H u + G w`,
//! `y = C x + v`, and the purified observations are `η = D w + v` with
//! `D = C G`, independent of the inputs.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{block_diag, SymMatrix};
use crate::lqg::{assemble_controller, FeedbackGains, Policy};
use crate::simulate::NoiseDraw;
use crate::system::{CovarianceProfile, TimeVaryingSystem};

#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub horizon: usize,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    /// `diag(Q_0..Q_T)`
    pub q: SymMatrix,
    /// `diag(R_0..R_{T−1})`
    pub r: SymMatrix,
    pub cs: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

pub fn build_stacked(sys: &TimeVaryingSystem) -> StackedSystem {
    let (n, m, p, horizon) = (sys.state_dim(), sys.input_dim(), sys.output_dim(), sys.horizon());
    let q = SymMatrix::new(block_diag(sys.q_all().iter().map(SymMatrix::as_matrix)));
    let r = SymMatrix::new(block_diag(sys.r_all().iter().map(SymMatrix::as_matrix)));

    let mut cs = DMatrix::zeros(p * horizon, n * (horizon + 1));
    for t in 0..horizon {
        cs.view_mut((p * t, n * t), (p, n)).copy_from(sys.c(t));
    }

    // Block row t+1 of G and H is A_t times block row t, plus the new terms.
    let mut g = DMatrix::zeros(n * (horizon + 1), n * (horizon + 1));
    let mut h = DMatrix::zeros(n * (horizon + 1), m * horizon);
    g.view_mut((0, 0), (n, n)).fill_with_identity();
    for t in 0..horizon {
        let a = sys.a(t);
        let g_row = a * g.view((n * t, 0), (n, n * (t + 1)));
        g.view_mut((n * (t + 1), 0), (n, n * (t + 1))).copy_from(&g_row);
        g.view_mut((n * (t + 1), n * (t + 1)), (n, n)).fill_with_identity();
        if t > 0 {
            let h_row = a * h.view((n * t, 0), (n, m * t));
            h.view_mut((n * (t + 1), 0), (n, m * t)).copy_from(&h_row);
        }
        h.view_mut((n * (t + 1), m * t), (n, m)).copy_from(sys.b(t));
    }
    let d = &cs * &g;
    StackedSystem { horizon, n, m, p, q, r, cs, g, h, d }
}

impl StackedSystem {
    /// Stacks a noise draw into `(w, v)`.
    pub fn stack_noise(&self, noise: &NoiseDraw) -> (DVector<f64>, DVector<f64>) {
        let w = DVector::from_iterator(
            self.n * (self.horizon + 1),
            std::iter::once(&noise.x0).chain(&noise.w).flat_map(|b| b.iter().copied()),
        );
        let v = DVector::from_iterator(self.p * self.horizon, noise.v.iter().flat_map(|b| b.iter().copied()));
        (w, v)
    }

    /// Block-diagonal `W = diag(X0, W_0..W_{T−1})` and `V = diag(V_0..V_{T−1})`.
    pub fn stack_covariance(&self, cov: &CovarianceProfile) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if cov.horizon() != self.horizon
            || cov.x0.dim() != self.n
            || cov.w.iter().any(|b| b.dim() != self.n)
            || cov.v.iter().any(|b| b.dim() != self.p)
        {
            return Err(Error::DimensionMismatch("covariance profile does not match stacked system".into()));
        }
        let w = block_diag(std::iter::once(&cov.x0).chain(&cov.w).map(SymMatrix::as_matrix));
        let v = block_diag(cov.v.iter().map(SymMatrix::as_matrix));
        Ok((w, v))
    }

    /// `R + HᵀQH`
    pub fn effective_input_cost(&self) -> DMatrix<f64> {
        self.r.as_matrix() + self.h.transpose() * self.q.as_matrix() * &self.h
    }

    fn observation_coupling(&self) -> DMatrix<f64> {
        &self.cs * &self.h
    }
}

/// A `T × T` block lower-triangular matrix. Blocks above the diagonal are
/// not stored, so causality holds by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLowerTriangular {
    row_dim: usize,
    col_dim: usize,
    rows: Vec<Vec<DMatrix<f64>>>,
}

impl BlockLowerTriangular {
    pub fn zeros(horizon: usize, row_dim: usize, col_dim: usize) -> Self {
        let rows = (0..horizon).map(|t| vec![DMatrix::zeros(row_dim, col_dim); t + 1]).collect();
        BlockLowerTriangular { row_dim, col_dim, rows }
    }

    /// Reads the lower blocks of `dense`; fails if any strictly upper block is nonzero.
    pub fn from_dense(dense: &DMatrix<f64>, horizon: usize, row_dim: usize, col_dim: usize) -> Result<Self> {
        if dense.shape() != (row_dim * horizon, col_dim * horizon) {
            return Err(Error::DimensionMismatch(format!(
                "gain is {}x{}, expected {}x{}",
                dense.nrows(),
                dense.ncols(),
                row_dim * horizon,
                col_dim * horizon
            )));
        }
        let mut out = Self::zeros(horizon, row_dim, col_dim);
        for t in 0..horizon {
            for s in 0..horizon {
                let view = dense.view((row_dim * t, col_dim * s), (row_dim, col_dim));
                if s <= t {
                    out.rows[t][s].copy_from(&view);
                } else if view.iter().any(|&v| v != 0.0) {
                    return Err(Error::InvalidInput(format!("gain block ({t}, {s}) above the diagonal is nonzero")));
                }
            }
        }
        Ok(out)
    }

    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn block_shape(&self) -> (usize, usize) {
        (self.row_dim, self.col_dim)
    }

    /// Block `(t, s)`; panics if `s > t`.
    pub fn block(&self, t: usize, s: usize) -> &DMatrix<f64> {
        &self.rows[t][s]
    }

    pub fn block_mut(&mut self, t: usize, s: usize) -> &mut DMatrix<f64> {
        &mut self.rows[t][s]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let horizon = self.horizon();
        let mut out = DMatrix::zeros(self.row_dim * horizon, self.col_dim * horizon);
        for (t, row) in self.rows.iter().enumerate() {
            for (s, block) in row.iter().enumerate() {
                out.view_mut((self.row_dim * t, self.col_dim * s), (self.row_dim, self.col_dim)).copy_from(block);
            }
        }
        out
    }

    /// Row `t` applied to the first `t+1` stacked input blocks.
    fn apply_row(&self, t: usize, inputs: &[DVector<f64>]) -> DVector<f64> {
        self.rows[t]
            .iter()
            .zip(inputs)
            .fold(DVector::zeros(self.row_dim), |acc, (block, x)| acc + block * x)
    }
}

/// `u = q + U η` in purified observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPurifiedController {
    pub gain: BlockLowerTriangular,
    pub offset: DVector<f64>,
}

/// `u = U' y + q'` in raw observations.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOutputController {
    pub gain: BlockLowerTriangular,
    pub offset: DVector<f64>,
}

fn check_controller(gain: &BlockLowerTriangular, offset: &DVector<f64>, st: &StackedSystem) -> Result<()> {
    if gain.horizon() != st.horizon || gain.block_shape() != (st.m, st.p) || offset.len() != st.m * st.horizon {
        return Err(Error::DimensionMismatch("controller does not match stacked system".into()));
    }
    Ok(())
}

/// Exact expected cost of `u = q + U η` when the noise has the covariances
/// in `cov` (zero mean).
pub fn controller_cost_trace(
    st: &StackedSystem,
    ctrl: &LinearPurifiedController,
    cov: &CovarianceProfile,
) -> Result<f64> {
    check_controller(&ctrl.gain, &ctrl.offset, st)?;
    let (w, v) = st.stack_covariance(cov)?;
    let u = ctrl.gain.to_dense();
    let r_eff = st.effective_input_cost();
    let ud = &u * &st.d;
    let qg = st.q.as_matrix() * &st.g;
    let w_weight = ud.transpose() * &r_eff * &ud
        + (st.g.transpose() * st.q.as_matrix() * &st.h * &ud) * 2.0
        + st.g.transpose() * &qg;
    let v_weight = u.transpose() * &r_eff * &u;
    let offset_cost = ctrl.offset.dot(&(&r_eff * &ctrl.offset));
    Ok(w_weight.dot(&w) + v_weight.dot(&v) + offset_cost)
}

/// Solves `(I + sign·U·C·H) X = [U | q]` by forward block substitution.
/// The system matrix is unit block lower-triangular.
fn unit_lower_solve(
    gain: &BlockLowerTriangular,
    offset: &DVector<f64>,
    st: &StackedSystem,
    sign: f64,
) -> (BlockLowerTriangular, DVector<f64>) {
    let (m, horizon) = (st.m, st.horizon);
    let coupling = gain.to_dense() * st.observation_coupling();
    let mut out = BlockLowerTriangular::zeros(horizon, st.m, st.p);
    let mut out_offset = DVector::zeros(m * horizon);
    for t in 0..horizon {
        for j in 0..=t {
            let mut block = gain.block(t, j).clone();
            for k in j..t {
                let n_tk = coupling.view((m * t, m * k), (m, m));
                block -= sign * n_tk * out.block(k, j);
            }
            *out.block_mut(t, j) = block;
        }
        let mut seg = offset.rows(m * t, m).clone_owned();
        for k in 0..t {
            let n_tk = coupling.view((m * t, m * k), (m, m));
            seg -= sign * n_tk * out_offset.rows(m * k, m);
        }
        out_offset.rows_mut(m * t, m).copy_from(&seg);
    }
    (out, out_offset)
}

/// `U' = (I + U C H)^{-1} U`, `q' = (I + U C H)^{-1} q`.
pub fn purified_to_output(ctrl: &LinearPurifiedController, st: &StackedSystem) -> Result<LinearOutputController> {
    check_controller(&ctrl.gain, &ctrl.offset, st)?;
    let (gain, offset) = unit_lower_solve(&ctrl.gain, &ctrl.offset, st, 1.0);
    Ok(LinearOutputController { gain, offset })
}

/// `U = (I − U' C H)^{-1} U'`, `q = (I − U' C H)^{-1} q'`.
pub fn output_to_purified(ctrl: &LinearOutputController, st: &StackedSystem) -> Result<LinearPurifiedController> {
    check_controller(&ctrl.gain, &ctrl.offset, st)?;
    let (gain, offset) = unit_lower_solve(&ctrl.gain, &ctrl.offset, st, -1.0);
    Ok(LinearPurifiedController { gain, offset })
}

/// Runs the noise-free copy of the plant (started at zero) under the same
/// inputs and returns `η_t = y_t − C_t x̂_t`.
pub fn purified_from_rollout(
    sys: &TimeVaryingSystem,
    u: &[DVector<f64>],
    y: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let horizon = sys.horizon();
    if u.len() != horizon
        || y.len() != horizon
        || u.iter().any(|ut| ut.len() != sys.input_dim())
        || y.iter().any(|yt| yt.len() != sys.output_dim())
    {
        return Err(Error::DimensionMismatch("trajectories do not match system dimensions".into()));
    }
    let mut x_hat = DVector::zeros(sys.state_dim());
    let mut eta = Vec::with_capacity(horizon);
    for t in 0..horizon {
        eta.push(&y[t] - sys.c(t) * &x_hat);
        x_hat = sys.a(t) * x_hat + sys.b(t) * &u[t];
    }
    Ok(eta)
}

/// Expands the recursive controller with gains `K_t`, `L_t` into the explicit
/// causal map `u = U' y`.
pub fn unroll_gains(sys: &TimeVaryingSystem, gains: &FeedbackGains) -> Result<LinearOutputController> {
    gains.validate_for(sys)?;
    let (n, m, p, horizon) = (sys.state_dim(), sys.input_dim(), sys.output_dim(), sys.horizon());
    // estimate[s] holds the coefficient of y_s in x̂_t for the current t.
    let mut estimate: Vec<DMatrix<f64>> = Vec::with_capacity(horizon);
    let mut gain = BlockLowerTriangular::zeros(horizon, m, p);
    for t in 0..horizon {
        if t > 0 {
            let closed = sys.a(t - 1) + sys.b(t - 1) * &gains.k[t - 1];
            let correction = DMatrix::identity(n, n) - &gains.l[t] * sys.c(t);
            let transition = correction * closed;
            for coeff in estimate.iter_mut() {
                *coeff = &transition * &*coeff;
            }
        }
        estimate.push(gains.l[t].clone());
        for (s, coeff) in estimate.iter().enumerate() {
            *gain.block_mut(t, s) = &gains.k[t] * coeff;
        }
    }
    Ok(LinearOutputController { gain, offset: DVector::zeros(m * horizon) })
}

/// The optimal LQG controller for `cov`, as an explicit output-feedback map.
pub fn unroll_kalman(sys: &TimeVaryingSystem, cov: &CovarianceProfile) -> Result<LinearOutputController> {
    unroll_gains(sys, &assemble_controller(sys, cov)?.gains())
}

/// Causal policy `u_t = Σ_{s≤t} U'_{t,s} y_s + q'_t`.
pub struct OutputFeedbackPolicy<'a> {
    ctrl: &'a LinearOutputController,
    history: Vec<DVector<f64>>,
}

impl<'a> OutputFeedbackPolicy<'a> {
    pub fn new(ctrl: &'a LinearOutputController) -> Self {
        OutputFeedbackPolicy { ctrl, history: Vec::new() }
    }
}

impl Policy for OutputFeedbackPolicy<'_> {
    fn reset(&mut self) {
        self.history.clear();
    }

    fn act(&mut self, t: usize, y: &DVector<f64>) -> DVector<f64> {
        self.history.push(y.clone());
        let m = self.ctrl.gain.block_shape().0;
        self.ctrl.gain.apply_row(t, &self.history) + self.ctrl.offset.rows(m * t, m)
    }
}

/// Causal policy `u_t = Σ_{s≤t} U_{t,s} η_s + q_t`, tracking the
/// noise-free plant internally to form `η`.
pub struct PurifiedPolicy<'a> {
    sys: &'a TimeVaryingSystem,
    ctrl: &'a LinearPurifiedController,
    x_hat: DVector<f64>,
    eta: Vec<DVector<f64>>,
}

impl<'a> PurifiedPolicy<'a> {
    pub fn new(sys: &'a TimeVaryingSystem, ctrl: &'a LinearPurifiedController) -> Self {
        PurifiedPolicy { sys, ctrl, x_hat: DVector::zeros(sys.state_dim()), eta: Vec::new() }
    }
}

impl Policy for PurifiedPolicy<'_> {
    fn reset(&mut self) {
        self.x_hat = DVector::zeros(self.sys.state_dim());
        self.eta.clear();
    }

    fn act(&mut self, t: usize, y: &DVector<f64>) -> DVector<f64> {
        self.eta.push(y - self.sys.c(t) * &self.x_hat);
        let m = self.ctrl.gain.block_shape().0;
        let u = self.ctrl.gain.apply_row(t, &self.eta) + self.ctrl.offset.rows(m * t, m);
        self.x_hat = self.sys.a(t) * &self.x_hat + self.sys.b(t) * &u;
        u
    }
}
