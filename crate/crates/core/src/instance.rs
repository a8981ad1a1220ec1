//! Problem instances: the seeded generator and the JSON instance format.
//!
//! Matrices are stored as row-major arrays of rows. The generator draws from
//! ChaCha20 seeded with `seed_from_u64`; a uniform on `[0, 1)` is
//! `(next_u64 >> 11) · 2^-53` and matrices are filled row by row.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::ambiguity::AmbiguitySpec;
use crate::error::{Error, Result};
use crate::files::{read_text, write_atomic};
use crate::linalg::{sym_eig, SymMatrix};
use crate::system::{CovarianceProfile, TimeVaryingSystem};

pub const INSTANCE_FORMAT: &str = "drlqg-instance/1";
pub const GENERATOR_RNG: &str = "chacha20";

/// Row-major matrix as written to disk.
pub type MatrixRows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorRecipe {
    pub rng: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Radii {
    pub x0: f64,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileRows {
    pub x0: MatrixRows,
    pub w: Vec<MatrixRows>,
    pub v: Vec<MatrixRows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub format: String,
    pub dims: Dims,
    /// Present when the instance came from [`generate`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorRecipe>,
    pub a: Vec<MatrixRows>,
    pub b: Vec<MatrixRows>,
    pub c: Vec<MatrixRows>,
    pub q: Vec<MatrixRows>,
    pub r: Vec<MatrixRows>,
    pub radii: Radii,
    pub nominal: ProfileRows,
}

/// Plant plus ambiguity set.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub system: TimeVaryingSystem,
    pub ambiguity: AmbiguitySpec,
}

pub fn to_rows(m: &DMatrix<f64>) -> MatrixRows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Converts rows to a matrix of the expected shape; errors name `field`.
pub fn from_rows(rows: &MatrixRows, nrows: usize, ncols: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::InvalidInput(format!("{field}: expected {nrows} rows, found {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::InvalidInput(format!("{field}: row {i} has {} entries, expected {ncols}", row.len())));
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!("{field}: entry ({i}, {j}) is not finite")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Like [`from_rows`] for a symmetric `d×d` matrix; asymmetry beyond
/// roundoff is rejected.
pub fn sym_from_rows(rows: &MatrixRows, d: usize, field: &str) -> Result<SymMatrix> {
    let m = from_rows(rows, d, d, field)?;
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("{field}: matrix is not symmetric (max asymmetry {asym:e})")));
    }
    Ok(SymMatrix::new(m))
}

fn indexed(name: &str, t: usize) -> String {
    format!("{name}[{t}]")
}

fn list<T>(
    items: &[MatrixRows],
    expected: usize,
    name: &str,
    convert: impl Fn(&MatrixRows, &str) -> Result<T>,
) -> Result<Vec<T>> {
    if items.len() != expected {
        return Err(Error::InvalidInput(format!("{name}: expected {expected} matrices, found {}", items.len())));
    }
    items.iter().enumerate().map(|(t, m)| convert(m, &indexed(name, t))).collect()
}

pub fn profile_to_rows(cov: &CovarianceProfile) -> ProfileRows {
    ProfileRows {
        x0: to_rows(&cov.x0),
        w: cov.w.iter().map(|z| to_rows(z)).collect(),
        v: cov.v.iter().map(|z| to_rows(z)).collect(),
    }
}

/// Converts stored covariances, naming fields with `prefix` in errors.
pub fn profile_from_rows(rows: &ProfileRows, n: usize, p: usize, horizon: usize, prefix: &str) -> Result<CovarianceProfile> {
    Ok(CovarianceProfile {
        x0: sym_from_rows(&rows.x0, n, &format!("{prefix}x0"))?,
        w: list(&rows.w, horizon, &format!("{prefix}w"), |m, f| sym_from_rows(m, n, f))?,
        v: list(&rows.v, horizon, &format!("{prefix}v"), |m, f| sym_from_rows(m, p, f))?,
    })
}

impl InstanceFile {
    pub fn from_problem(problem: &Problem, generator: Option<GeneratorRecipe>) -> Self {
        let sys = &problem.system;
        let amb = &problem.ambiguity;
        let dense = |ms: &[DMatrix<f64>]| ms.iter().map(to_rows).collect();
        let sym = |ms: &[SymMatrix]| ms.iter().map(|m| to_rows(m)).collect();
        InstanceFile {
            format: INSTANCE_FORMAT.into(),
            dims: Dims { n: sys.state_dim(), m: sys.input_dim(), p: sys.output_dim(), horizon: sys.horizon() },
            generator,
            a: dense(sys.a_all()),
            b: dense(sys.b_all()),
            c: dense(sys.c_all()),
            q: sym(sys.q_all()),
            r: sym(sys.r_all()),
            radii: Radii { x0: amb.rho_x0, w: amb.rho_w.clone(), v: amb.rho_v.clone() },
            nominal: profile_to_rows(&amb.nominal),
        }
    }

    /// Validates every field and builds the problem.
    pub fn to_problem(&self) -> Result<Problem> {
        if self.format != INSTANCE_FORMAT {
            return Err(Error::InvalidInput(format!("format: expected \"{INSTANCE_FORMAT}\", found \"{}\"", self.format)));
        }
        let Dims { n, m, p, horizon } = self.dims;
        if n == 0 || m == 0 || p == 0 || horizon == 0 {
            return Err(Error::InvalidInput("dims: all dimensions must be positive".into()));
        }
        let system = TimeVaryingSystem::new(
            list(&self.a, horizon, "a", |x, f| from_rows(x, n, n, f))?,
            list(&self.b, horizon, "b", |x, f| from_rows(x, n, m, f))?,
            list(&self.c, horizon, "c", |x, f| from_rows(x, p, n, f))?,
            list(&self.q, horizon + 1, "q", |x, f| sym_from_rows(x, n, f))?,
            list(&self.r, horizon, "r", |x, f| sym_from_rows(x, m, f))?,
        )?;
        if self.radii.w.len() != horizon || self.radii.v.len() != horizon {
            return Err(Error::InvalidInput(format!("radii: expected {horizon} entries in w and v")));
        }
        let nominal = profile_from_rows(&self.nominal, n, p, horizon, "nominal.")?;
        nominal.validate_for(&system)?;
        let ambiguity = AmbiguitySpec { nominal, rho_x0: self.radii.x0, rho_w: self.radii.w.clone(), rho_v: self.radii.v.clone() };
        ambiguity.validate()?;
        Ok(Problem { system, ambiguity })
    }

    /// Parses JSON; syntax and schema errors report line and column.
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.into(),
            message: format!("line {}, column {}: {e}", e.line(), e.column()),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("instance serializes");
        s.push('\n');
        s
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, &path.display().to_string())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

/// Reads, parses and validates an instance file.
pub fn load_problem(path: &Path) -> Result<Problem> {
    InstanceFile::read(path)?.to_problem().map_err(|e| match e {
        Error::Io(_) | Error::File { .. } | Error::Parse { .. } => e,
        other => Error::Parse { path: path.display().to_string(), message: other.to_string() },
    })
}

/// Uniform draws on `[0, 1)` from the top 53 bits of each 64-bit output.
struct UnitUniform(ChaCha20Rng);

impl UnitUniform {
    fn next(&mut self) -> f64 {
        (self.0.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    fn matrix(&mut self, d: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out[(i, j)] = self.next();
            }
        }
        out
    }

    /// `Ξ Λ Ξᵀ` with `Ξ` the eigenvectors of `M + Mᵀ` for a uniform `M` and
    /// `Λ` uniform on `[1, 2]`.
    fn nominal(&mut self, d: usize) -> SymMatrix {
        let m = self.matrix(d);
        let basis = sym_eig(&SymMatrix::new(&m + m.transpose())).expect("finite matrix").vectors;
        let spectrum: Vec<f64> = (0..d).map(|_| 1.0 + self.next()).collect();
        let scaled = DMatrix::from_fn(d, d, |i, j| basis[(i, j)] * spectrum[j]);
        SymMatrix::new(scaled * basis.transpose())
    }
}

fn rect_eye(r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::identity(r, c)
}

/// Benchmark family: `A_t = 0.1·(I + superdiagonal ones)`, identity `B, C, Q, R`,
/// random nominal covariances with spectrum in `[1, 2]` and uniform radius `rho`.
/// Nominal blocks are drawn in the order `X0, W_0.., V_0..`.
pub fn generate(n: usize, m: usize, p: usize, horizon: usize, seed: u64, rho: f64) -> Result<InstanceFile> {
    if n == 0 || m == 0 || p == 0 || horizon == 0 {
        return Err(Error::InvalidInput("dimensions and horizon must be positive".into()));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::InvalidInput(format!("radius must be finite and nonnegative, got {rho}")));
    }
    let a = DMatrix::from_fn(n, n, |i, j| if j == i || j == i + 1 { 0.1 } else { 0.0 });
    let system = TimeVaryingSystem::new(
        vec![a; horizon],
        vec![rect_eye(n, m); horizon],
        vec![rect_eye(p, n); horizon],
        vec![SymMatrix::identity(n); horizon + 1],
        vec![SymMatrix::identity(m); horizon],
    )?;
    let mut rng = UnitUniform(ChaCha20Rng::seed_from_u64(seed));
    let x0 = rng.nominal(n);
    let w = (0..horizon).map(|_| rng.nominal(n)).collect();
    let v = (0..horizon).map(|_| rng.nominal(p)).collect();
    let ambiguity = AmbiguitySpec::uniform(CovarianceProfile { x0, w, v }, rho);
    let recipe = GeneratorRecipe { rng: GENERATOR_RNG.into(), seed };
    Ok(InstanceFile::from_problem(&Problem { system, ambiguity }, Some(recipe)))
}
