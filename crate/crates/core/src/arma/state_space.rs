use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{Error, Result};
use crate::numerics::spectral_radius;

/// Single-output innovations-form model
///
/// ```text
/// s_{t+1} = A s_t + K e_t
/// x_t     = B s_t + e_t
/// ```
///
/// `Ā = A - K B` drives the state when it is reconstructed from past outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateSpaceRecord", into = "StateSpaceRecord")]
pub struct StateSpaceModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    k: DMatrix<f64>,
    s0: DVector<f64>,
    sigma_eps2: f64,
    abar_spectral_radius: f64,
}

/// JSON layout; matrices are flattened row-major.
#[derive(Serialize, Deserialize)]
struct StateSpaceRecord {
    dim: usize,
    #[serde(rename = "A")]
    a: Vec<f64>,
    #[serde(rename = "B")]
    b: Vec<f64>,
    #[serde(rename = "K")]
    k: Vec<f64>,
    s0: Vec<f64>,
    sigma_eps2: f64,
}

impl From<StateSpaceModel> for StateSpaceRecord {
    fn from(m: StateSpaceModel) -> Self {
        let row_major = |x: &DMatrix<f64>| x.transpose().as_slice().to_vec();
        StateSpaceRecord {
            dim: m.dim(),
            a: row_major(&m.a),
            b: row_major(&m.b),
            k: row_major(&m.k),
            s0: m.s0.as_slice().to_vec(),
            sigma_eps2: m.sigma_eps2,
        }
    }
}

impl TryFrom<StateSpaceRecord> for StateSpaceModel {
    type Error = Error;

    fn try_from(r: StateSpaceRecord) -> Result<Self> {
        let n = r.dim;
        if r.a.len() != n * n || r.b.len() != n || r.k.len() != n || r.s0.len() != n {
            return Err(Error::ShapeMismatch(format!("state-space record inconsistent with dim={n}")));
        }
        StateSpaceModel::new(
            DMatrix::from_row_slice(n, n, &r.a),
            DMatrix::from_row_slice(1, n, &r.b),
            DMatrix::from_row_slice(n, 1, &r.k),
            DVector::from_vec(r.s0),
            r.sigma_eps2,
        )
    }
}

impl StateSpaceModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, k: DMatrix<f64>, s0: DVector<f64>, sigma_eps2: f64) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.shape() != (1, n) || k.shape() != (n, 1) || s0.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "A {:?}, B {:?}, K {:?}, s0 {} are not consistent",
                a.shape(),
                b.shape(),
                k.shape(),
                s0.len()
            )));
        }
        if !(sigma_eps2 > 0.0) {
            return Err(Error::InvalidModel(format!("noise variance must be positive, got {sigma_eps2}")));
        }
        let abar = &a - &k * &b;
        let abar_spectral_radius = spectral_radius(&abar);
        Ok(StateSpaceModel { a, b, k, s0, sigma_eps2, abar_spectral_radius })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn s0(&self) -> &DVector<f64> {
        &self.s0
    }

    pub fn sigma_eps2(&self) -> f64 {
        self.sigma_eps2
    }

    /// `Ā = A - K B`.
    pub fn abar(&self) -> DMatrix<f64> {
        &self.a - &self.k * &self.b
    }

    pub fn abar_spectral_radius(&self) -> f64 {
        self.abar_spectral_radius
    }

    /// Stability flag: spectral radius of `Ā` strictly below one.
    pub fn is_stable(&self) -> bool {
        self.abar_spectral_radius < 1.0
    }

    pub fn with_s0(mut self, s0: DVector<f64>) -> Result<Self> {
        if s0.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!("s0 has length {}, expected {}", s0.len(), self.dim())));
        }
        self.s0 = s0;
        Ok(self)
    }

    /// State sequence `s_0 .. s_T` driven by the noise `e_0 .. e_T` (length `T + 2`
    /// would include `s_{T+1}`; it is not produced).
    pub fn states(&self, e: &[f64]) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(e.len());
        let mut s = self.s0.clone();
        for (t, &et) in e.iter().enumerate() {
            out.push(s.clone());
            if t + 1 < e.len() {
                s = &self.a * &s + self.k.column(0) * et;
            }
        }
        out
    }

    /// Outputs `x_t = B s_t + e_t` for the given noise sequence, starting from `s0`.
    pub fn simulate_with_noise(&self, e: &[f64]) -> Result<Trajectory> {
        let x = self.states(e).iter().zip(e).map(|(s, et)| (&self.b * s)[0] + et).collect();
        Trajectory::new(x, e.to_vec())
    }

    /// Returns a copy whose `s0` reproduces `traj` exactly under this model's
    /// recursion, solving the first `dim` output equations for the initial state.
    pub fn with_initial_state_from(&self, traj: &Trajectory) -> Result<Self> {
        let n = self.dim();
        if n == 0 {
            return Ok(self.clone());
        }
        if traj.x.len() < n {
            return Err(Error::HorizonTooShort { horizon: traj.horizon(), order: n });
        }
        // row t: B A^t; rhs: x_t - e_t - Σ_{j<t} B A^{t-1-j} K e_j
        let mut obs = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        let mut row = self.b.clone();
        let mut driven = DVector::<f64>::zeros(n);
        for t in 0..n {
            obs.set_row(t, &row.row(0));
            rhs[t] = traj.x[t] - traj.e[t] - (&self.b * &driven)[0];
            driven = &self.a * &driven + self.k.column(0) * traj.e[t];
            row = &row * &self.a;
        }
        let s0 = obs
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Numerical("model is not observable; initial state is not identifiable".into()))?;
        self.clone().with_s0(s0)
    }

    /// Markov parameters `B A^k K` for `k = 0 .. n-1`, the similarity invariants
    /// of the realization.
    pub fn impulse_response(&self, n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n);
        let mut v = self.k.clone();
        for _ in 0..n {
            out.push(if self.dim() == 0 { 0.0 } else { (&self.b * &v)[(0, 0)] });
            v = &self.a * v;
        }
        out
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}
