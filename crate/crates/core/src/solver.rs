//! Least squares, nuclear-norm penalized and norm-constrained estimation of `𝒪𝒦`
//! from a Hankel set, plus the singular value thresholding prox.
//!
//! All solvers act on `½‖Y − L X‖²_F` with `Y = X_future` and `X = X_past`. With
//! the thin SVD `X = U S Vᵀ` and `W = U S`, this objective equals
//! `½ r₀² + ½‖(L − L_ls) W‖²_F`, where `L_ls` is the minimum-norm least-squares
//! solution and `r₀` its residual. Iterations therefore only touch `t × t` matrices.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hankel::HankelSet;
use crate::io::write_matrix_csv;
use crate::numerics::{numerical_rank, spectral_norm, SubdifferentialBlocks, Svd};

/// Singular values of `X_past` below this fraction of the largest are treated as zero.
pub const PINV_CUTOFF: f64 = 1e-12;
/// Constrained solves stop once `|residual − η| ≤ ETA_TOL · η`.
pub const ETA_TOL: f64 = 1e-4;
/// Penalized solves also require the prox-gradient stationarity certificate to be below this fraction of `λ`.
pub const STATIONARITY_TOL: f64 = 1e-7;
/// Cap on outer iterations of the constrained solve.
pub const MAX_BISECTIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Lambda(f64),
    Eta(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `1 / σ_max(X_past)²`, the inverse Lipschitz constant of the gradient.
    #[default]
    InverseLipschitz,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub target: Target,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Singular values of `L̂` below this fraction of the largest count as zero in the reported rank.
    pub rank_threshold: f64,
    pub step_rule: StepRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            target: Target::Lambda(0.0),
            max_iters: 50_000,
            rel_tol: 1e-12,
            rank_threshold: 1e-6,
            step_rule: StepRule::InverseLipschitz,
        }
    }
}

impl SolverConfig {
    pub fn lambda(lambda: f64) -> Self {
        SolverConfig { target: Target::Lambda(lambda), ..Default::default() }
    }

    pub fn eta(eta: f64) -> Self {
        SolverConfig { target: Target::Eta(eta), ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if !(0.0..1.0).contains(&self.rank_threshold) {
            return Err(Error::InvalidArgument(format!(
                "rank_threshold must lie in [0, 1), got {}",
                self.rank_threshold
            )));
        }
        match self.target {
            Target::Lambda(v) | Target::Eta(v) if !(v >= 0.0 && v.is_finite()) => Err(Error::InvalidArgument(format!(
                "penalty/constraint level must be finite and non-negative, got {v}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverResult {
    #[serde(skip)]
    pub l_hat: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub residual_fro: f64,
    /// `½‖Y − L X‖²_F + λ‖L‖_*` after each iteration.
    pub objective_trace: Vec<f64>,
    pub iters: usize,
    pub converged: bool,
    pub lambda: f64,
    pub eta: Option<f64>,
    /// Distance from the negative gradient to `λ ∂‖L̂‖_*`.
    pub optimality_residual: f64,
}

impl SolverResult {
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.iter().sum()
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Writes `estimate.csv` and `solver.json` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_matrix_csv(&self.l_hat, BufWriter::new(File::create(dir.join("estimate.csv"))?))?;
        self.write_json(BufWriter::new(File::create(dir.join("solver.json"))?))
    }
}

/// Soft-thresholds the singular values of `m` by `tau`.
pub fn svt(m: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    assert!(tau >= 0.0, "threshold must be non-negative");
    if tau == 0.0 {
        return m.clone();
    }
    Svd::new(m).recompose(|s| (s - tau).max(0.0))
}

/// Precomputed quantities of `½‖Y − L X‖²_F`.
#[derive(Clone, Debug)]
pub struct LsProblem {
    w: DMatrix<f64>,
    h: DMatrix<f64>,
    l_ls: DMatrix<f64>,
    floor_sq: f64,
    y_norm: f64,
    lipschitz: f64,
    lambda_max: f64,
}

impl LsProblem {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(Error::ShapeMismatch(format!("X has {} columns but Y has {}", x.ncols(), y.ncols())));
        }
        let svd = Svd::new(x);
        let keep = numerical_rank(svd.s.as_slice(), PINV_CUTOFF);
        let u = svd.u.columns(0, keep);
        let s = svd.s.rows(0, keep);
        let v_t = svd.v_t.rows(0, keep);
        let mut w = u.into_owned();
        let mut yv = y * v_t.transpose();
        for j in 0..keep {
            w.column_mut(j).scale_mut(s[j]);
            yv.column_mut(j).unscale_mut(s[j]);
        }
        let l_ls = yv * u.transpose();
        let floor_sq = (y - &l_ls * x).norm_squared();
        Ok(LsProblem {
            h: &w * w.transpose(),
            lipschitz: if keep > 0 { s[0] * s[0] } else { 0.0 },
            w,
            l_ls,
            floor_sq,
            y_norm: y.norm(),
            lambda_max: spectral_norm(&(y * x.transpose())),
        })
    }

    pub fn from_hankel(hs: &HankelSet) -> Result<Self> {
        Self::new(&hs.x_past, &hs.x_future)
    }

    pub fn ls_solution(&self) -> &DMatrix<f64> {
        &self.l_ls
    }

    /// `‖Y − L_ls X‖_F`, the smallest achievable residual.
    pub fn floor(&self) -> f64 {
        self.floor_sq.sqrt()
    }

    pub fn y_norm(&self) -> f64 {
        self.y_norm
    }

    /// `‖Y Xᵀ‖_op`: for `λ` at or above this, `L = 0` is optimal.
    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    /// `σ_max(X)²`.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn excess_sq(&self, l: &DMatrix<f64>) -> f64 {
        ((l - &self.l_ls) * &self.w).norm_squared()
    }

    pub fn residual(&self, l: &DMatrix<f64>) -> f64 {
        (self.floor_sq + self.excess_sq(l)).sqrt()
    }

    /// `½‖Y − L X‖²_F`.
    pub fn loss(&self, l: &DMatrix<f64>) -> f64 {
        0.5 * (self.floor_sq + self.excess_sq(l))
    }

    pub fn gradient(&self, l: &DMatrix<f64>) -> DMatrix<f64> {
        (l - &self.l_ls) * &self.h
    }

    /// `dist(−∇, λ ∂‖L‖_*)`.
    pub fn optimality_residual(&self, l: &DMatrix<f64>, lambda: f64) -> f64 {
        let neg_grad = -self.gradient(l);
        SubdifferentialBlocks::new(l, &neg_grad, 1e-10).dist_sq(lambda).sqrt()
    }
}

fn objective(problem: &LsProblem, l: &DMatrix<f64>, lambda: f64) -> f64 {
    let excess = 0.5 * problem.excess_sq(l);
    if lambda == 0.0 {
        excess
    } else {
        excess + lambda * Svd::new(l).s.sum()
    }
}

fn finish(
    problem: &LsProblem,
    l: DMatrix<f64>,
    lambda: f64,
    eta: Option<f64>,
    trace: Vec<f64>,
    iters: usize,
    converged: bool,
    cfg: &SolverConfig,
) -> SolverResult {
    let svd = Svd::new(&l);
    let singular_values: Vec<f64> = svd.s.iter().copied().collect();
    SolverResult {
        rank: numerical_rank(&singular_values, cfg.rank_threshold),
        residual_fro: problem.residual(&l),
        optimality_residual: problem.optimality_residual(&l, lambda),
        singular_values,
        objective_trace: trace,
        iters,
        converged,
        lambda,
        eta,
        l_hat: l,
    }
}

/// Minimum-norm least-squares estimate.
pub fn solve_ls(hs: &HankelSet) -> Result<SolverResult> {
    let problem = LsProblem::from_hankel(hs)?;
    Ok(ls_result(&problem, &SolverConfig::default()))
}

fn ls_result(problem: &LsProblem, cfg: &SolverConfig) -> SolverResult {
    let l = problem.l_ls.clone();
    let trace = vec![problem.loss(&l)];
    finish(problem, l, 0.0, None, trace, 0, true, cfg)
}

/// Nuclear-norm penalized estimate for `cfg.target = Lambda(λ)`.
pub fn solve_nuclear(hs: &HankelSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let problem = LsProblem::from_hankel(hs)?;
    solve_nuclear_problem(&problem, cfg, None)
}

/// Penalized solve on a prepared problem, optionally warm-started.
pub fn solve_nuclear_problem(
    problem: &LsProblem,
    cfg: &SolverConfig,
    warm: Option<&DMatrix<f64>>,
) -> Result<SolverResult> {
    cfg.validate()?;
    let lambda = match cfg.target {
        Target::Lambda(l) => l,
        Target::Eta(_) => return Err(Error::InvalidArgument("solve_nuclear needs a lambda target".into())),
    };
    if lambda == 0.0 || problem.lipschitz == 0.0 {
        let mut res = ls_result(problem, cfg);
        res.lambda = lambda;
        res.optimality_residual = problem.optimality_residual(&res.l_hat, lambda);
        if lambda > 0.0 {
            // X = 0: the loss is constant and zero is the unique minimizer
            res = finish(
                problem,
                DMatrix::zeros(problem.l_ls.nrows(), problem.l_ls.ncols()),
                lambda,
                None,
                vec![0.5 * problem.floor_sq],
                0,
                true,
                cfg,
            );
        }
        return Ok(res);
    }
    if lambda >= problem.lambda_max {
        let zero = DMatrix::zeros(problem.l_ls.nrows(), problem.l_ls.ncols());
        let trace = vec![problem.loss(&zero)];
        return Ok(finish(problem, zero, lambda, None, trace, 0, true, cfg));
    }
    let (l, trace, iters, converged) = mfista(problem, lambda, cfg, warm);
    Ok(finish(problem, l, lambda, None, trace, iters, converged, cfg))
}

/// Monotone FISTA on the shifted objective `½‖(L − L_ls)W‖² + λ‖L‖_*`.
///
/// Stops when the relative objective change drops below `rel_tol` and the
/// stationarity certificate `2‖z − y‖/step` is below `STATIONARITY_TOL · λ`.
/// A rejected extrapolated point resets the momentum; a plain proximal step that
/// fails to decrease the objective means the iterate is stationary to machine precision.
fn mfista(
    problem: &LsProblem,
    lambda: f64,
    cfg: &SolverConfig,
    warm: Option<&DMatrix<f64>>,
) -> (DMatrix<f64>, Vec<f64>, usize, bool) {
    let step = match cfg.step_rule {
        StepRule::InverseLipschitz => 1.0 / problem.lipschitz,
    };
    let shift = 0.5 * problem.floor_sq;
    let mut x = warm.cloned().unwrap_or_else(|| DMatrix::zeros(problem.l_ls.nrows(), problem.l_ls.ncols()));
    let mut fx = objective(problem, &x, lambda);
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut trace = Vec::new();
    let mut plain_step = true;
    for iter in 1..=cfg.max_iters {
        let z = svt(&(&y - problem.gradient(&y) * step), lambda * step);
        let fz = objective(problem, &z, lambda);
        let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
        // -∇f(y) - (z - y)/step lies in λ∂‖z‖_*, so this bounds the optimality residual at z
        let certificate = 2.0 * (&z - &y).norm() / step;
        if fz < fx {
            let change = (fx - fz) / fz.abs().max(f64::MIN_POSITIVE);
            y = &z + (&z - &x) * ((theta - 1.0) / theta_next);
            x = z;
            fx = fz;
            theta = theta_next;
            plain_step = false;
            trace.push(fx + shift);
            if change < cfg.rel_tol && certificate <= STATIONARITY_TOL * lambda {
                return (x, trace, iter, true);
            }
        } else {
            trace.push(fx + shift);
            if plain_step {
                return (x, trace, iter, true);
            }
            y = x.clone();
            theta = 1.0;
            plain_step = true;
        }
    }
    (x, trace, cfg.max_iters, false)
}

/// Minimum nuclear norm subject to `‖Y − L X‖_F ≤ η`, for `cfg.target = Eta(η)`.
pub fn solve_constrained(hs: &HankelSet, cfg: &SolverConfig) -> Result<SolverResult> {
    let problem = LsProblem::from_hankel(hs)?;
    solve_constrained_problem(&problem, cfg)
}

/// Finds `λ` with `residual(L̂_λ) = η` by safeguarded regula falsi (Illinois) in
/// `ln λ`, using that the residual of the penalized solution is non-decreasing in `λ`.
pub fn solve_constrained_problem(problem: &LsProblem, cfg: &SolverConfig) -> Result<SolverResult> {
    cfg.validate()?;
    let eta = match cfg.target {
        Target::Eta(e) => e,
        Target::Lambda(_) => return Err(Error::InvalidArgument("solve_constrained needs an eta target".into())),
    };
    let (m, n) = problem.l_ls.shape();
    if eta >= problem.y_norm {
        let zero = DMatrix::zeros(m, n);
        let trace = vec![problem.loss(&zero)];
        return Ok(finish(problem, zero, problem.lambda_max, Some(eta), trace, 0, true, cfg));
    }
    let floor = problem.floor();
    if eta < floor {
        return Err(Error::Infeasible { eta, floor });
    }
    let target_excess = eta * eta - problem.floor_sq;
    if target_excess <= 0.0 || problem.lipschitz == 0.0 {
        let mut res = ls_result(problem, cfg);
        res.eta = Some(eta);
        return Ok(res);
    }

    // g(u) = ln excess(e^u) − ln target: increasing in u, negative at the lower end
    let g = |res: &SolverResult| (res.residual_fro.powi(2) - problem.floor_sq).max(0.0).ln() - target_excess.ln();
    let solve_at = |u: f64, warm: Option<&DMatrix<f64>>| -> Result<SolverResult> {
        let inner = SolverConfig { target: Target::Lambda(u.exp()), ..cfg.clone() };
        solve_nuclear_problem(problem, &inner, warm)
    };
    let within = |res: &SolverResult| (res.residual_fro - eta).abs() <= ETA_TOL * eta;

    let mut u_hi = problem.lambda_max.ln();
    let mut u_lo = u_hi + (1e-14f64).ln();
    let mut lo = solve_at(u_lo, None)?;
    let mut g_lo = g(&lo);
    if within(&lo) || g_lo >= 0.0 {
        // already at the floor for every practical λ
        return Ok(SolverResult { eta: Some(eta), ..lo });
    }
    let mut g_hi = (problem.y_norm.powi(2) - problem.floor_sq).ln() - target_excess.ln();
    let mut side = 0i8;
    let mut total_iters = lo.iters;
    for _ in 0..MAX_BISECTIONS {
        let mut u = u_hi - g_hi * (u_hi - u_lo) / (g_hi - g_lo);
        if !u.is_finite() || u <= u_lo || u >= u_hi {
            u = 0.5 * (u_lo + u_hi);
        }
        let res = solve_at(u, Some(&lo.l_hat))?;
        total_iters += res.iters;
        if within(&res) {
            return Ok(SolverResult { eta: Some(eta), iters: total_iters, ..res });
        }
        let gu = g(&res);
        if gu < 0.0 {
            u_lo = u;
            g_lo = gu;
            lo = res;
            if side == -1 {
                g_hi *= 0.5;
            }
            side = -1;
        } else {
            u_hi = u;
            g_hi = gu;
            if side == 1 {
                g_lo *= 0.5;
            }
            side = 1;
        }
    }
    // best feasible end of the bracket
    Ok(SolverResult { eta: Some(eta), iters: total_iters, converged: false, ..lo })
}

/// `½‖Y − L X‖²_F + λ rank(L)`, with rank counted at `1e-10` relative.
pub fn rank_objective(y: &DMatrix<f64>, x: &DMatrix<f64>, l: &DMatrix<f64>, lambda: f64) -> f64 {
    0.5 * (y - l * x).norm_squared() + lambda * Svd::new(l).rank(1e-10) as f64
}

/// Brute-force minimizer of `½‖Y − L X‖²_F + λ rank(L)` for `n ≤ 4`.
///
/// For each rank `r` the best rank-`r` fit is the truncated SVD of `L_ls W`
/// mapped back through `W⁺`, then polished by alternating least squares over
/// the factors `L = P Q`.
pub fn rank_penalized_oracle(y: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let n = y.nrows();
    if n > 4 || x.nrows() > 4 {
        return Err(Error::ScaleGuard(format!("rank oracle is limited to n <= 4, got {n}")));
    }
    let problem = LsProblem::new(x, y)?;
    let weighted = Svd::new(&(&problem.l_ls * &problem.w));
    let w_pinv = problem.w.clone().pseudo_inverse(1e-14).map_err(|e| Error::Numerical(e.to_string()))?;
    let x_pinv =
        x.clone().pseudo_inverse(PINV_CUTOFF * spectral_norm(x)).map_err(|e| Error::Numerical(e.to_string()))?;

    let mut best = DMatrix::zeros(n, x.nrows());
    let mut best_obj = rank_objective(y, x, &best, lambda);
    for r in 1..=n.min(x.nrows()) {
        let mut truncated = weighted.clone();
        for i in r..truncated.s.len() {
            truncated.s[i] = 0.0;
        }
        let mut cand = truncated.recompose(|s| s) * &w_pinv;
        let mut fit = 0.5 * (y - &cand * x).norm_squared();
        let svd = Svd::new(&cand);
        let mut p = svd.u.columns(0, r).into_owned();
        for j in 0..r {
            p.column_mut(j).scale_mut(svd.s[j].sqrt());
        }
        for _ in 0..200 {
            let Ok(p_pinv) = p.clone().pseudo_inverse(1e-14) else { break };
            let q = &p_pinv * y * &x_pinv;
            let Ok(qx_pinv) = (&q * x).pseudo_inverse(1e-14) else { break };
            p = y * qx_pinv;
            let next = &p * &q;
            let next_fit = 0.5 * (y - &next * x).norm_squared();
            if next_fit < fit - 1e-15 * fit.max(1.0) {
                fit = next_fit;
                cand = next;
            } else {
                break;
            }
        }
        let obj = rank_objective(y, x, &cand, lambda);
        if obj < best_obj {
            best_obj = obj;
            best = cand;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arma::ArmaModel;
    use crate::hankel::{build_hankel, ok_product};
    use crate::numerics::nuclear_norm;
    use crate::rng::stream_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream_rng(seed, 11);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn hankel_from(x_past: DMatrix<f64>, x_future: DMatrix<f64>) -> HankelSet {
        let (t, n) = x_past.shape();
        HankelSet { t, horizon: n + 2 * t - 2, n_cols: n, e: DMatrix::zeros(t, n), x_past, x_future, seed: None }
    }

    /// `Y = 𝒪𝒦 X_past` for a simulated ARMA trajectory.
    fn noiseless(arma: &ArmaModel, horizon: usize, t: usize, seed: u64) -> (HankelSet, DMatrix<f64>) {
        let traj = arma.simulate(horizon, seed).unwrap();
        let hs = build_hankel(&traj, t).unwrap();
        let ok = ok_product(&arma.to_state_space(), t);
        let y = &ok * &hs.x_past;
        (hankel_from(hs.x_past, y), ok)
    }

    fn noisy_instance(seed: u64) -> HankelSet {
        let arma = ArmaModel::new(vec![0.6, -0.3], vec![0.4], 1.0).unwrap();
        let traj = arma.simulate(600, seed).unwrap();
        build_hankel(&traj, 6).unwrap()
    }

    #[test]
    fn svt_diagonal_and_identity_cases() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 0.5]));
        let z = svt(&m, 1.0);
        assert_abs_diff_eq!(
            (z - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0, 0.0]))).norm(),
            0.0,
            epsilon = 1e-12
        );
        let r = gaussian(4, 4, 1);
        assert_eq!(svt(&r, 0.0), r);
    }

    #[test]
    fn svt_matches_variational_oracle() {
        // min ½‖Z − M‖² + τ‖Z‖_* equals min over P, Q of ½‖PQᵀ − M‖² + τ/2 (‖P‖² + ‖Q‖²)
        let m = gaussian(6, 6, 2);
        let tau = 0.7;
        let mut p = gaussian(6, 6, 3) * 0.1;
        let mut q = gaussian(6, 6, 4) * 0.1;
        let step = 0.02;
        for _ in 0..200_000 {
            let r = &p * q.transpose() - &m;
            let gp = &r * &q + &p * tau;
            let gq = r.transpose() * &p + &q * tau;
            p -= gp * step;
            q -= gq * step;
        }
        let oracle = &p * q.transpose();
        let z = svt(&m, tau);
        assert!((&z - &oracle).norm() <= 1e-5, "gap {}", (&z - &oracle).norm());
        // prox optimality: M − Z ∈ τ ∂‖Z‖_*
        let blocks = SubdifferentialBlocks::new(&z, &(&m - &z), 1e-10);
        assert!(blocks.dist_sq(tau).sqrt() <= 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn svt_is_non_expansive(seed in 0u64..100_000, tau in 0.0f64..3.0) {
            let a = gaussian(5, 5, seed);
            let b = gaussian(5, 5, seed + 100_000);
            prop_assert!((svt(&a, tau) - svt(&b, tau)).norm() <= (&a - &b).norm() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ls_with_identity_design() {
        let y = gaussian(3, 3, 5);
        let res = solve_ls(&hankel_from(DMatrix::identity(3, 3), y.clone())).unwrap();
        assert_abs_diff_eq!((res.l_hat - y).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ls_with_zero_design_is_zero() {
        let res = solve_ls(&hankel_from(DMatrix::zeros(3, 10), gaussian(3, 10, 6))).unwrap();
        assert_eq!(res.l_hat, DMatrix::zeros(3, 3));
        let nuc =
            solve_nuclear(&hankel_from(DMatrix::zeros(3, 10), gaussian(3, 10, 6)), &SolverConfig::lambda(0.0)).unwrap();
        assert_eq!(nuc.l_hat, DMatrix::zeros(3, 3));
    }

    #[test]
    fn ls_recovers_ok_on_noiseless_data() {
        let arma = ArmaModel::new(vec![0.6, -0.3], vec![0.4], 1.0).unwrap();
        let (hs, ok) = noiseless(&arma, 400, 6, 7);
        let res = solve_ls(&hs).unwrap();
        assert!((&res.l_hat - &ok).norm() <= 1e-6 * ok.norm());
    }

    #[test]
    fn ls_is_minimum_norm_on_rank_deficient_design() {
        let mut x = gaussian(3, 20, 8);
        let row = x.row(0).into_owned();
        x.set_row(2, &(row * 2.0));
        let y = gaussian(3, 20, 9);
        let res = solve_ls(&hankel_from(x.clone(), y.clone())).unwrap();
        let pinv = x.clone().pseudo_inverse(1e-12).unwrap();
        assert_abs_diff_eq!((res.l_hat - y * pinv).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn nuclear_with_zero_lambda_matches_ls() {
        let hs = noisy_instance(10);
        let ls = solve_ls(&hs).unwrap();
        let nuc = solve_nuclear(&hs, &SolverConfig::lambda(0.0)).unwrap();
        assert!((ls.l_hat - nuc.l_hat).norm() <= 1e-8);
    }

    #[test]
    fn nuclear_zero_above_lambda_max() {
        let hs = noisy_instance(11);
        let problem = LsProblem::from_hankel(&hs).unwrap();
        let lam = problem.lambda_max() * 1.0001;
        let res = solve_nuclear(&hs, &SolverConfig::lambda(lam)).unwrap();
        assert_eq!(res.rank, 0);
        // zero is optimal: the gradient at 0 lies in λ times the unit operator-norm ball
        assert!(res.optimality_residual <= 1e-9 * lam);
        // just below the threshold, zero stops being optimal
        let below = solve_nuclear(&hs, &SolverConfig::lambda(problem.lambda_max() * 0.99)).unwrap();
        assert!(below.rank >= 1);
    }

    #[test]
    fn nuclear_optimality_and_monotone_trace() {
        let hs = noisy_instance(12);
        let problem = LsProblem::from_hankel(&hs).unwrap();
        for frac in [0.001, 0.01, 0.1, 0.5] {
            let lam = frac * problem.lambda_max();
            let res = solve_nuclear(&hs, &SolverConfig::lambda(lam)).unwrap();
            assert!(res.converged);
            assert!(res.optimality_residual <= 1e-6 * lam, "λ={lam}: {}", res.optimality_residual);
            assert!(res.objective_trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(
                res.singular_values.windows(2).all(|w| w[1] <= w[0]) && res.singular_values.iter().all(|&s| s >= 0.0)
            );
        }
    }

    #[test]
    fn nuclear_rank_two_on_noiseless_data() {
        let arma = ArmaModel::new(vec![0.6, -0.3], vec![0.4], 1.0).unwrap();
        let (hs, ok) = noiseless(&arma, 800, 6, 13);
        let problem = LsProblem::from_hankel(&hs).unwrap();
        let res = solve_nuclear(&hs, &SolverConfig::lambda(1e-6 * problem.lambda_max())).unwrap();
        assert_eq!(res.rank, 2);
        assert_eq!(Svd::new(&ok).rank(1e-6), 2);
    }

    #[test]
    fn lambda_path_is_monotone() {
        let hs = noisy_instance(14);
        let problem = LsProblem::from_hankel(&hs).unwrap();
        let path: Vec<SolverResult> = [0.9, 0.5, 0.1, 0.02, 0.004]
            .iter()
            .map(|f| solve_nuclear_problem(&problem, &SolverConfig::lambda(f * problem.lambda_max()), None).unwrap())
            .collect();
        for w in path.windows(2) {
            // λ decreases along the path
            assert!(w[1].nuclear_norm() >= w[0].nuclear_norm() - 1e-8);
            assert!(w[1].residual_fro <= w[0].residual_fro + 1e-8);
        }
    }

    #[test]
    fn constrained_trivial_and_infeasible() {
        let hs = noisy_instance(15);
        let y_norm = hs.x_future.norm();
        let res = solve_constrained(&hs, &SolverConfig::eta(y_norm * 1.01)).unwrap();
        assert_eq!(res.l_hat, DMatrix::zeros(6, 6));
        let floor = solve_ls(&hs).unwrap().residual_fro;
        match solve_constrained(&hs, &SolverConfig::eta(0.5 * floor)) {
            Err(Error::Infeasible { floor: f, .. }) => assert_abs_diff_eq!(f, floor, epsilon = 1e-9 * floor),
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn constrained_pins_noiseless_solution() {
        let arma = ArmaModel::new(vec![0.6, -0.3], vec![0.4], 1.0).unwrap();
        let (hs, ok) = noiseless(&arma, 400, 6, 16);
        let eta = 1e-8 * hs.x_future.norm();
        let res = solve_constrained(&hs, &SolverConfig::eta(eta)).unwrap();
        assert!(res.residual_fro <= eta * (1.0 + ETA_TOL));
        assert!((&res.l_hat - &ok).norm() <= 1e-4 * ok.norm());
    }

    #[test]
    fn constrained_hits_eta_and_orders_norms() {
        let hs = noisy_instance(17);
        let floor = solve_ls(&hs).unwrap().residual_fro;
        let top = hs.x_future.norm();
        let mut last = f64::INFINITY;
        for k in 1..=5 {
            let eta = floor + (top - floor) * k as f64 / 6.0;
            let res = solve_constrained(&hs, &SolverConfig::eta(eta)).unwrap();
            assert!(res.converged, "η={eta}");
            assert!(res.residual_fro <= eta * (1.0 + ETA_TOL));
            assert!((res.residual_fro - eta).abs() <= ETA_TOL * eta);
            assert!(res.nuclear_norm() <= last + 1e-8);
            last = res.nuclear_norm();
        }
    }

    #[test]
    fn constrained_norm_at_most_truth_when_truth_feasible() {
        let arma = ArmaModel::new(vec![0.5], vec![0.3], 1.0).unwrap();
        let traj = arma.simulate(800, 18).unwrap();
        let ss = arma.to_state_space().with_initial_state_from(&traj).unwrap();
        let hs = build_hankel(&traj, 6).unwrap();
        let ok = ok_product(&ss, 6);
        let truth_residual = (&hs.x_future - &ok * &hs.x_past).norm();
        let res = solve_constrained(&hs, &SolverConfig::eta(truth_residual * 1.0001)).unwrap();
        assert!(res.nuclear_norm() <= nuclear_norm(&ok) + 1e-8);
    }

    #[test]
    fn rank_oracle_limits() {
        let x = gaussian(3, 12, 19);
        let y = gaussian(3, 12, 20);
        let ls = LsProblem::new(&x, &y).unwrap();
        let at_zero = rank_penalized_oracle(&y, &x, 0.0).unwrap();
        assert!((&at_zero - ls.ls_solution()).norm() <= 1e-9);
        let huge = rank_penalized_oracle(&y, &x, 1e9).unwrap();
        assert_eq!(huge, DMatrix::zeros(3, 3));
        assert_abs_diff_eq!(rank_objective(&y, &x, &huge, 1e9), 0.5 * y.norm_squared(), epsilon = 1e-12);
        assert!(matches!(
            rank_penalized_oracle(&gaussian(5, 9, 1), &gaussian(5, 9, 2), 1.0),
            Err(Error::ScaleGuard(_))
        ));
    }

    #[test]
    fn rank_oracle_beats_convex_relaxation() {
        for seed in 0..5 {
            let x = gaussian(3, 3, 30 + seed);
            let y = gaussian(3, 3, 40 + seed);
            let oracle = rank_penalized_oracle(&y, &x, 0.5).unwrap();
            let hs = hankel_from(x.clone(), y.clone());
            let nuc = solve_nuclear(&hs, &SolverConfig::lambda(0.5)).unwrap();
            assert!(rank_objective(&y, &x, &oracle, 0.5) <= rank_objective(&y, &x, &nuc.l_hat, 0.5) + 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::lambda(-1.0).validate().is_err());
        assert!(SolverConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { rel_tol: 0.0, ..Default::default() }.validate().is_err());
        let cfg: SolverConfig = serde_json::from_str(r#"{"target": {"eta": 2.5}, "max_iters": 10}"#).unwrap();
        assert_eq!(cfg.target, Target::Eta(2.5));
        assert_eq!(cfg.rank_threshold, 1e-6);
    }

    #[test]
    fn result_export() {
        let hs = noisy_instance(21);
        let res = solve_nuclear(&hs, &SolverConfig::lambda(10.0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        res.write_dir(dir.path()).unwrap();
        let back = crate::io::read_matrix_csv(File::open(dir.path().join("estimate.csv")).unwrap()).unwrap();
        assert_eq!(back, res.l_hat);
        let json: serde_json::Value =
            serde_json::from_reader(File::open(dir.path().join("solver.json")).unwrap()).unwrap();
        assert_eq!(json["iters"], res.iters);
        assert_eq!(json["singular_values"].as_array().unwrap().len(), 6);
    }
}
