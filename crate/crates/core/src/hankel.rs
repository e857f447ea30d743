//! Past/future/noise Hankel matrices and the structured matrices relating them:
//!
//! ```text
//! X_future = 𝒪 𝒦 X_past + 𝒪 Ā₀ + 𝒩 E
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arma::{StateSpaceModel, Trajectory};
use crate::error::{Error, Result};
use crate::io::write_matrix_csv;

/// Hankel matrices of depth `t` built from `x_0 .. x_T` and `e_0 .. e_T`.
///
/// Entry maps (`0 <= i < t`, `0 <= j < n_cols`):
/// `x_past[i][j] = x_{i+j}`, `x_future[i][j] = x_{t+i+j}`, `e[i][j] = e_{t+i+j}`,
/// with `n_cols = T - 2t + 2`.
#[derive(Clone, Debug)]
pub struct HankelSet {
    pub t: usize,
    pub horizon: usize,
    pub n_cols: usize,
    pub x_past: DMatrix<f64>,
    pub x_future: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HankelManifest {
    pub t: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n_cols: usize,
    pub seed: Option<u64>,
}

pub fn check_window(t: usize, horizon: usize) -> Result<()> {
    if t == 0 || horizon < 2 * t {
        return Err(Error::WindowTooLarge { t, horizon });
    }
    Ok(())
}

pub fn build_hankel(traj: &Trajectory, t: usize) -> Result<HankelSet> {
    let horizon = traj.horizon();
    check_window(t, horizon)?;
    let n_cols = horizon + 2 - 2 * t;
    let x = &traj.x;
    let e = &traj.e;
    Ok(HankelSet {
        t,
        horizon,
        n_cols,
        x_past: DMatrix::from_fn(t, n_cols, |i, j| x[i + j]),
        x_future: DMatrix::from_fn(t, n_cols, |i, j| x[t + i + j]),
        e: DMatrix::from_fn(t, n_cols, |i, j| e[t + i + j]),
        seed: traj.seed,
    })
}

impl HankelSet {
    pub fn manifest(&self) -> HankelManifest {
        HankelManifest { t: self.t, horizon: self.horizon, n_cols: self.n_cols, seed: self.seed }
    }

    /// Writes `X_past.csv`, `X_future.csv`, `E.csv` and `hankel.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, m) in [("X_past.csv", &self.x_past), ("X_future.csv", &self.x_future), ("E.csv", &self.e)] {
            write_matrix_csv(m, BufWriter::new(File::create(dir.join(name))?))?;
        }
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("hankel.json"))?), &self.manifest())?;
        Ok(())
    }
}

/// `𝒪`: rows `B A^i` for `i = 0 .. t-1`.
pub fn observability(ss: &StateSpaceModel, t: usize) -> DMatrix<f64> {
    let n = ss.dim();
    let mut o = DMatrix::zeros(t, n);
    let mut row = ss.b().clone();
    for i in 0..t {
        o.set_row(i, &row.row(0));
        row = &row * ss.a();
    }
    o
}

/// `𝒦 = [Ā^{t-1} K, .., Ā K, K]`.
pub fn controllability(ss: &StateSpaceModel, t: usize) -> DMatrix<f64> {
    let n = ss.dim();
    let abar = ss.abar();
    let mut kc = DMatrix::zeros(n, t);
    let mut col = ss.k().clone();
    for j in (0..t).rev() {
        kc.set_column(j, &col.column(0));
        col = &abar * col;
    }
    kc
}

/// `𝒩`: unit lower-triangular Toeplitz matrix with `𝒩[i][j] = B A^{i-j-1} K` below the diagonal.
pub fn noise_toeplitz(ss: &StateSpaceModel, t: usize) -> DMatrix<f64> {
    let markov = ss.impulse_response(t.saturating_sub(1));
    DMatrix::from_fn(t, t, |i, j| match i.cmp(&j) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => markov[i - j - 1],
        std::cmp::Ordering::Less => 0.0,
    })
}

/// The product `𝒪𝒦`, the target of the estimators.
pub fn ok_product(ss: &StateSpaceModel, t: usize) -> DMatrix<f64> {
    observability(ss, t) * controllability(ss, t)
}

/// `𝒪`, `𝒦`, `𝒩` and the initial-condition block `Ā₀` for one Hankel set.
#[derive(Clone, Debug)]
pub struct StructuredMatrices {
    pub o: DMatrix<f64>,
    pub kc: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// Column `j` is `Ā^t s_j`, the part of the state at time `t + j` not
    /// explained by the `t` outputs preceding it.
    pub abar0: DMatrix<f64>,
}

/// Builds the structured matrices for `hs`. `ss` must carry the initial state of
/// the trajectory behind `hs`; the states `s_j` are reconstructed from it through
/// `s_{j+1} = Ā s_j + K x_j`.
pub fn build_structured(ss: &StateSpaceModel, hs: &HankelSet) -> Result<StructuredMatrices> {
    let t = hs.t;
    if t == 0 {
        return Err(Error::InvalidArgument("depth t must be at least 1".into()));
    }
    let abar = ss.abar();
    let mut abar_t = DMatrix::identity(ss.dim(), ss.dim());
    for _ in 0..t {
        abar_t = &abar * abar_t;
    }
    let mut abar0 = DMatrix::zeros(ss.dim(), hs.n_cols);
    let mut s: DVector<f64> = ss.s0().clone();
    for j in 0..hs.n_cols {
        abar0.set_column(j, &(&abar_t * &s));
        s = &abar * s + ss.k().column(0) * hs.x_past[(0, j)];
    }
    Ok(StructuredMatrices { o: observability(ss, t), kc: controllability(ss, t), n: noise_toeplitz(ss, t), abar0 })
}

impl StructuredMatrices {
    pub fn ok(&self) -> DMatrix<f64> {
        &self.o * &self.kc
    }

    /// `𝒪Ā₀ + 𝒩E`, the nuisance term of the Hankel relation.
    pub fn nuisance(&self, hs: &HankelSet) -> Result<DMatrix<f64>> {
        self.check_shapes(hs)?;
        Ok(&self.o * &self.abar0 + &self.n * &hs.e)
    }

    fn check_shapes(&self, hs: &HankelSet) -> Result<()> {
        let t = hs.t;
        if self.o.nrows() != t || self.kc.ncols() != t || self.n.shape() != (t, t) || self.abar0.ncols() != hs.n_cols {
            return Err(Error::ShapeMismatch(format!(
                "structured matrices (O {:?}, K {:?}, N {:?}, Ā₀ {:?}) do not fit a depth-{t} Hankel set with {} columns",
                self.o.shape(),
                self.kc.shape(),
                self.n.shape(),
                self.abar0.shape(),
                hs.n_cols
            )));
        }
        Ok(())
    }
}

/// `‖X_future − 𝒪𝒦 X_past − 𝒪Ā₀ − 𝒩E‖_F`.
pub fn verify_hankel_identity(hs: &HankelSet, sm: &StructuredMatrices) -> Result<f64> {
    let nuisance = sm.nuisance(hs)?;
    Ok((&hs.x_future - sm.ok() * &hs.x_past - nuisance).norm())
}
