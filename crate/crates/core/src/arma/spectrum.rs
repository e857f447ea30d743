//! Spectral density, autocovariances and the Toeplitz covariance of a window.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix};

use super::ArmaModel;
use crate::error::{Error, Result};
use crate::numerics::{golden_section_min, sym_eigen, sym_function};

const QUADRATURE_TOL: f64 = 1e-10;
const QUADRATURE_MAX_NODES: usize = 1 << 24;
const EXTREMA_GRID: usize = 1 << 14;

/// Covariance of the window `[x_0, .., x_{t-1}]` of the stationary process.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    pub t: usize,
    /// Autocovariances `γ(0) .. γ(t-1)`.
    pub autocov: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub sqrt_sigma: DMatrix<f64>,
    pub inv_sqrt_sigma: DMatrix<f64>,
    /// Eigenvalues of `sigma`, ascending.
    pub eigenvalues: Vec<f64>,
    /// Essential infimum `m` of the spectral density.
    pub density_min: f64,
    /// Essential supremum `M` of the spectral density.
    pub density_max: f64,
}

impl CovarianceModel {
    pub fn eig_min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn eig_max(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Covariance model built directly from a symmetric positive definite matrix
    /// (density extrema are unknown and set to NaN).
    pub fn from_matrix(sigma: DMatrix<f64>) -> Result<Self> {
        let t = sigma.nrows();
        if !sigma.is_square() || t == 0 {
            return Err(Error::ShapeMismatch("covariance must be a non-empty square matrix".into()));
        }
        let autocov = sigma.row(0).iter().copied().collect();
        Self::assemble(t, autocov, sigma, f64::NAN, f64::NAN)
    }

    fn assemble(t: usize, autocov: Vec<f64>, sigma: DMatrix<f64>, m: f64, big_m: f64) -> Result<Self> {
        let (vals, vecs) = sym_eigen(&sigma);
        if !(vals[0] > 0.0) {
            return Err(Error::SingularCovariance { min_eigenvalue: vals[0] });
        }
        let sqrt_sigma = sym_function(&vals, &vecs, f64::sqrt);
        let inv_sqrt_sigma = sym_function(&vals, &vecs, |v| 1.0 / v.sqrt());
        Ok(CovarianceModel {
            t,
            autocov,
            sigma,
            sqrt_sigma,
            inv_sqrt_sigma,
            eigenvalues: vals.as_slice().to_vec(),
            density_min: m,
            density_max: big_m,
        })
    }
}

fn horner(coeffs: impl DoubleEndedIterator<Item = f64>, z: Complex<f64>) -> Complex<f64> {
    coeffs.rev().fold(Complex::new(0.0, 0.0), |acc, c| acc * z + c)
}

impl ArmaModel {
    /// `φ(z) = 1 - Σ a_i z^i` and `θ(z) = 1 + Σ b_j z^j` at `z = e^{iν}`.
    fn transfer_parts(&self, nu: f64) -> (Complex<f64>, Complex<f64>) {
        let z = Complex::from_polar(1.0, nu);
        let phi = horner(std::iter::once(1.0).chain(self.a.iter().map(|a| -a)), z);
        let theta = horner(std::iter::once(1.0).chain(self.b.iter().copied()), z);
        (phi, theta)
    }

    /// `f(ν) = σ²/(2π) |θ(e^{iν})/φ(e^{iν})|²`.
    pub fn spectral_density(&self, nu: f64) -> Result<f64> {
        let (phi, theta) = self.transfer_parts(nu);
        let (pn, tn) = (phi.norm(), theta.norm());
        if pn < 1e-12 {
            return Err(if tn < 1e-12 {
                Error::DegenerateDensity { nu }
            } else {
                Error::NonStationary { spectral_radius: 1.0 }
            });
        }
        Ok(self.sigma_eps2 / (2.0 * PI) * (tn / pn).powi(2))
    }

    /// Autocovariances `γ(0) .. γ(lags-1)` as `∫_{-π}^{π} f(ν) cos(kν) dν`.
    ///
    /// The integrand is smooth and 2π-periodic, so the trapezoid rule converges
    /// geometrically; nodes are doubled until successive estimates agree.
    pub fn autocovariances(&self, lags: usize) -> Result<Vec<f64>> {
        let mut n = 64usize;
        let nodes = |n: usize, offset: f64| (0..n).map(move |j| -PI + 2.0 * PI * (j as f64 + offset) / n as f64);
        let mut sums = vec![0.0; lags];
        for nu in nodes(n, 0.0) {
            let f = self.spectral_density(nu)?;
            for (k, s) in sums.iter_mut().enumerate() {
                *s += f * (k as f64 * nu).cos();
            }
        }
        let mut current: Vec<f64> = sums.iter().map(|s| 2.0 * PI * s / n as f64).collect();
        loop {
            for nu in nodes(n, 0.5) {
                let f = self.spectral_density(nu)?;
                for (k, s) in sums.iter_mut().enumerate() {
                    *s += f * (k as f64 * nu).cos();
                }
            }
            n *= 2;
            let next: Vec<f64> = sums.iter().map(|s| 2.0 * PI * s / n as f64).collect();
            let change = current.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let tol = QUADRATURE_TOL.max(1e-14 * next[0].abs());
            current = next;
            if change <= tol {
                return Ok(current);
            }
            if n >= QUADRATURE_MAX_NODES {
                return Err(Error::QuadratureDiverged { nodes: n, last_change: change });
            }
        }
    }

    /// Essential infimum and supremum of the spectral density: a grid of
    /// 2¹⁴ + 1 frequencies on `[0, π]` refined by golden-section search.
    pub fn density_extrema(&self) -> Result<(f64, f64)> {
        let step = PI / EXTREMA_GRID as f64;
        let grid: Vec<f64> =
            (0..=EXTREMA_GRID).map(|j| self.spectral_density(j as f64 * step)).collect::<Result<_>>()?;
        let refine = |idx: usize, sign: f64| -> Result<f64> {
            let lo = (idx.saturating_sub(1)) as f64 * step;
            let hi = ((idx + 1).min(EXTREMA_GRID)) as f64 * step;
            let (_, v) =
                golden_section_min(|nu| sign * self.spectral_density(nu).unwrap_or(f64::INFINITY), lo, hi, 1e-12);
            Ok((sign * v).min(f64::INFINITY))
        };
        let argmin = (0..grid.len()).min_by(|&i, &j| grid[i].total_cmp(&grid[j])).unwrap();
        let argmax = (0..grid.len()).max_by(|&i, &j| grid[i].total_cmp(&grid[j])).unwrap();
        let m = refine(argmin, 1.0)?.min(grid[argmin]);
        let big_m = refine(argmax, -1.0)?.max(grid[argmax]);
        Ok((m, big_m))
    }

    /// Toeplitz covariance of `[x_0, .., x_{t-1}]` with its square roots and the
    /// spectral-density extrema that bracket its eigenvalues.
    pub fn covariance_model(&self, t: usize) -> Result<CovarianceModel> {
        if t == 0 {
            return Err(Error::InvalidArgument("window length must be at least 1".into()));
        }
        let autocov = self.autocovariances(t)?;
        let sigma = DMatrix::from_fn(t, t, |i, j| autocov[i.abs_diff(j)]);
        let (m, big_m) = self.density_extrema()?;
        CovarianceModel::assemble(t, autocov, sigma, m, big_m)
    }
}
