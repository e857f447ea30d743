//! ARMA models, trajectories and their innovations-form state-space realization.
//!
//! The generative recursion is
//!
//! ```text
//! x_t = a_1 x_{t-1} + ... + a_p x_{t-p} + b_1 e_{t-1} + ... + b_q e_{t-q} + e_t
//! ```
//!
//! for `t >= max(p, q)`, with `e_t` i.i.d. `N(0, sigma_eps2)`. Pre-sample values
//! `x_0 .. x_{max(p,q)-1}` are set equal to the corresponding noise draws.

mod spectrum;
mod state_space;

pub use spectrum::CovarianceModel;
pub use state_space::StateSpaceModel;

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::spectral_radius;
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmaRecord")]
pub struct ArmaModel {
    pub p: usize,
    pub q: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma_eps2: f64,
}

#[derive(Deserialize)]
struct ArmaRecord {
    p: usize,
    q: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    sigma_eps2: f64,
}

impl TryFrom<ArmaRecord> for ArmaModel {
    type Error = Error;

    fn try_from(r: ArmaRecord) -> Result<Self> {
        if r.a.len() != r.p || r.b.len() != r.q {
            return Err(Error::InvalidModel(format!(
                "declared orders (p={}, q={}) do not match coefficient lengths ({}, {})",
                r.p,
                r.q,
                r.a.len(),
                r.b.len()
            )));
        }
        ArmaModel::new(r.a, r.b, r.sigma_eps2)
    }
}

impl ArmaModel {
    /// Validates coefficients, noise variance and stationarity.
    pub fn new(a: Vec<f64>, b: Vec<f64>, sigma_eps2: f64) -> Result<Self> {
        if !(sigma_eps2 > 0.0) || !sigma_eps2.is_finite() {
            return Err(Error::InvalidModel(format!("noise variance must be positive, got {sigma_eps2}")));
        }
        if a.iter().chain(&b).any(|c| !c.is_finite()) {
            return Err(Error::InvalidModel("coefficients must be finite".into()));
        }
        let model = ArmaModel { p: a.len(), q: b.len(), a, b, sigma_eps2 };
        let rho = model.ar_spectral_radius();
        if rho >= 1.0 {
            return Err(Error::NonStationary { spectral_radius: rho });
        }
        Ok(model)
    }

    pub fn white_noise(sigma_eps2: f64) -> Result<Self> {
        Self::new(vec![], vec![], sigma_eps2)
    }

    /// `max(p, q)`: the state dimension and the number of pre-sample values.
    pub fn order(&self) -> usize {
        self.p.max(self.q)
    }

    /// Spectral radius of the AR companion matrix (reciprocal root moduli of φ).
    pub fn ar_spectral_radius(&self) -> f64 {
        spectral_radius(&companion(&self.a))
    }

    /// Spectral radius of the MA companion matrix; below 1 means θ is invertible.
    pub fn ma_spectral_radius(&self) -> f64 {
        spectral_radius(&companion(&self.b.iter().map(|b| -b).collect::<Vec<_>>()))
    }

    /// Draws a model whose AR and MA reciprocal roots all lie in the annulus
    /// `[0.1, max_radius]`, so both φ and θ have roots outside the unit disk.
    pub fn random_stable<R: Rng + ?Sized>(p: usize, q: usize, max_radius: f64, sigma_eps2: f64, rng: &mut R) -> Self {
        assert!(max_radius > 0.1 && max_radius < 1.0, "max_radius must lie in (0.1, 1)");
        let phi = random_unit_poly(p, max_radius, rng);
        let theta = random_unit_poly(q, max_radius, rng);
        let a = phi[1..].iter().map(|c| -c).collect();
        let b = theta[1..].to_vec();
        ArmaModel::new(a, b, sigma_eps2).expect("random roots are inside the stable annulus")
    }

    /// Simulates `x_0 .. x_T` with noise drawn from the `(seed, 0)` stream.
    pub fn simulate(&self, horizon: usize, seed: u64) -> Result<Trajectory> {
        let mut rng = stream_rng(seed, 0);
        let mut traj = self.simulate_with_rng(horizon, &mut rng)?;
        traj.seed = Some(seed);
        Ok(traj)
    }

    pub fn simulate_with_rng<R: Rng + ?Sized>(&self, horizon: usize, rng: &mut R) -> Result<Trajectory> {
        if horizon < self.order() {
            return Err(Error::HorizonTooShort { horizon, order: self.order() });
        }
        let sd = self.sigma_eps2.sqrt();
        let e: Vec<f64> = (0..=horizon)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect();
        self.simulate_with_noise(e)
    }

    /// Runs the recursion on an explicit noise sequence `e_0 .. e_T`.
    pub fn simulate_with_noise(&self, e: Vec<f64>) -> Result<Trajectory> {
        if e.is_empty() {
            return Err(Error::InvalidArgument("noise sequence must be non-empty".into()));
        }
        let horizon = e.len() - 1;
        let r = self.order();
        if horizon < r {
            return Err(Error::HorizonTooShort { horizon, order: r });
        }
        let mut x = vec![0.0; e.len()];
        x[..r].copy_from_slice(&e[..r]);
        for t in r..e.len() {
            let ar: f64 = self.a.iter().enumerate().map(|(i, a)| a * x[t - 1 - i]).sum();
            let ma: f64 = self.b.iter().enumerate().map(|(j, b)| b * e[t - 1 - j]).sum();
            x[t] = ar + ma + e[t];
        }
        Ok(Trajectory { x, e, seed: None })
    }

    /// Innovations-form realization of dimension `max(p, q)`.
    ///
    /// `A` is the companion matrix with first column `a` (zero padded), `B = e_1ᵀ`
    /// and `K_i = a_i + b_i`, so the first state coordinate is the one-step
    /// predictor `x_t - e_t`. The returned model starts from `s_0 = 0`; use
    /// [`StateSpaceModel::with_initial_state_from`] to align it with a trajectory.
    pub fn to_state_space(&self) -> StateSpaceModel {
        let r = self.order();
        let coef = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
        let a = companion(&(0..r).map(|i| coef(&self.a, i)).collect::<Vec<_>>());
        let mut b = DMatrix::zeros(1, r);
        if r > 0 {
            b[(0, 0)] = 1.0;
        }
        let k = DMatrix::from_fn(r, 1, |i, _| coef(&self.a, i) + coef(&self.b, i));
        StateSpaceModel::new(a, b, k, nalgebra::DVector::zeros(r), self.sigma_eps2)
            .expect("companion realization has consistent shapes")
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Companion matrix with `first_col` down the first column and ones on the superdiagonal.
fn companion(first_col: &[f64]) -> DMatrix<f64> {
    let r = first_col.len();
    let mut m = DMatrix::zeros(r, r);
    for (i, c) in first_col.iter().enumerate() {
        m[(i, 0)] = *c;
        if i + 1 < r {
            m[(i, i + 1)] = 1.0;
        }
    }
    m
}

/// Coefficients `[1, c_1, .., c_d]` of `Π (1 - ρ_i z)` with random reciprocal roots.
fn random_unit_poly<R: Rng + ?Sized>(degree: usize, max_radius: f64, rng: &mut R) -> Vec<f64> {
    let mut poly = vec![1.0];
    let mut remaining = degree;
    let mul = |poly: &[f64], factor: &[f64]| {
        let mut out = vec![0.0; poly.len() + factor.len() - 1];
        for (i, p) in poly.iter().enumerate() {
            for (j, f) in factor.iter().enumerate() {
                out[i + j] += p * f;
            }
        }
        out
    };
    while remaining > 0 {
        let radius = rng.random_range(0.1..max_radius);
        if remaining >= 2 && rng.random_bool(0.5) {
            let angle = rng.random_range(0.05..std::f64::consts::PI - 0.05);
            // (1 - ρ e^{iω} z)(1 - ρ e^{-iω} z)
            poly = mul(&poly, &[1.0, -2.0 * radius * angle.cos(), radius * radius]);
            remaining -= 2;
        } else {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            poly = mul(&poly, &[1.0, -sign * radius]);
            remaining -= 1;
        }
    }
    poly
}

/// Observed values `x_0 .. x_T` together with the noise draws that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<f64>,
    pub e: Vec<f64>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryRow {
    index: usize,
    x: f64,
    e: f64,
}

impl Trajectory {
    pub fn new(x: Vec<f64>, e: Vec<f64>) -> Result<Self> {
        if x.is_empty() || x.len() != e.len() {
            return Err(Error::ShapeMismatch(format!(
                "trajectory needs equal non-empty x and e, got {} and {}",
                x.len(),
                e.len()
            )));
        }
        Ok(Trajectory { x, e, seed: None })
    }

    /// The horizon `T`; the trajectory holds `T + 1` observations.
    pub fn horizon(&self) -> usize {
        self.x.len() - 1
    }

    /// Writes `index,x,e` rows. Floats use the shortest round-trip representation.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (index, (&x, &e)) in self.x.iter().zip(&self.e).enumerate() {
            wtr.serialize(TrajectoryRow { index, x, e })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut x = Vec::new();
        let mut e = Vec::new();
        for (expected, row) in rdr.deserialize::<TrajectoryRow>().enumerate() {
            let row = row?;
            if row.index != expected {
                return Err(Error::ShapeMismatch(format!("row {expected} has index {}", row.index)));
            }
            x.push(row.x);
            e.push(row.e);
        }
        Trajectory::new(x, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ar1(a: f64) -> ArmaModel {
        ArmaModel::new(vec![a], vec![], 1.0).unwrap()
    }

    #[test]
    fn white_noise_trajectory_is_the_noise() {
        let traj = ArmaModel::white_noise(1.0).unwrap().simulate(5, 11).unwrap();
        assert_eq!(traj.x.len(), 6);
        assert_eq!(traj.x, traj.e);
    }

    #[test]
    fn ar1_unrolls_by_hand() {
        let traj = ar1(0.5).simulate_with_noise(vec![1.0; 6]).unwrap();
        let expected = [1.0, 1.5, 1.75, 1.875, 1.9375, 1.96875];
        for (x, want) in traj.x.iter().zip(expected) {
            assert_abs_diff_eq!(*x, want, epsilon = 1e-15);
        }
    }

    #[test]
    fn presample_values_equal_noise() {
        let m = ArmaModel::new(vec![0.3, 0.2], vec![0.4, 0.1, -0.2], 2.0).unwrap();
        let traj = m.simulate(20, 3).unwrap();
        assert_eq!(traj.x[..3], traj.e[..3]);
        for t in 3..=20 {
            let rhs = 0.3 * traj.x[t - 1] + 0.2 * traj.x[t - 2] + 0.4 * traj.e[t - 1] + 0.1 * traj.e[t - 2]
                - 0.2 * traj.e[t - 3]
                + traj.e[t];
            assert_abs_diff_eq!(traj.x[t], rhs, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        let m = ArmaModel::new(vec![0.5, -0.2], vec![0.3], 1.5).unwrap();
        let a = m.simulate(500, 42).unwrap();
        let b = m.simulate(500, 42).unwrap();
        assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert_ne!(a.x, m.simulate(500, 43).unwrap().x);
    }

    #[test]
    fn rejects_nonstationary_and_bad_inputs() {
        assert!(matches!(ArmaModel::new(vec![1.1], vec![], 1.0), Err(Error::NonStationary { .. })));
        assert!(matches!(ArmaModel::new(vec![0.5, 0.5], vec![], 1.0), Err(Error::NonStationary { .. })));
        assert!(matches!(ArmaModel::new(vec![0.5], vec![], 0.0), Err(Error::InvalidModel(_))));
        assert!(matches!(
            ArmaModel::new(vec![0.2, 0.1], vec![], 1.0).unwrap().simulate(1, 0),
            Err(Error::HorizonTooShort { horizon: 1, order: 2 })
        ));
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let m = ArmaModel::new(vec![0.5, -0.25], vec![0.4], 2.0).unwrap();
        let mut buf = Vec::new();
        m.to_json(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        for key in ["\"p\"", "\"q\"", "\"a\"", "\"b\"", "\"sigma_eps2\""] {
            assert!(text.contains(key));
        }
        assert_eq!(ArmaModel::from_json(&buf[..]).unwrap(), m);
        let bad = r#"{"p":1,"q":0,"a":[1.5],"b":[],"sigma_eps2":1.0}"#;
        assert!(ArmaModel::from_json(bad.as_bytes()).is_err());
        let mismatched = r#"{"p":2,"q":0,"a":[0.5],"b":[],"sigma_eps2":1.0}"#;
        assert!(ArmaModel::from_json(mismatched.as_bytes()).is_err());
    }

    #[test]
    fn trajectory_csv_roundtrip_is_exact() {
        let traj = ArmaModel::new(vec![0.7], vec![0.2], 0.3).unwrap().simulate(50, 9).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("index,x,e\n"));
        let back = Trajectory::read_csv(&buf[..]).unwrap();
        assert_eq!(back.x, traj.x);
        assert_eq!(back.e, traj.e);
    }

    proptest! {
        #[test]
        fn random_stable_models_are_stationary_and_invertible(seed in 0u64..10_000, p in 0usize..4, q in 0usize..4) {
            let mut rng = stream_rng(seed, 0);
            let m = ArmaModel::random_stable(p, q, 0.9, 1.0, &mut rng);
            prop_assert_eq!((m.p, m.q), (p, q));
            prop_assert!(m.ar_spectral_radius() < 0.9 + 1e-9);
            prop_assert!(m.ma_spectral_radius() < 0.9 + 1e-9);
        }
    }
}
