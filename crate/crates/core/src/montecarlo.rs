//! Monte Carlo oracles for the covariance of `H`, the Gaussian width of the
//! descent cone, the norms of `H̃`, small-ball frequencies, and end-to-end
//! estimation experiments.
//!
//! Replicate `i` always draws from `stream_rng(seed, i)` and results are
//! aggregated in replicate order, so outputs do not depend on the worker count.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arma::ArmaModel;
use crate::error::{Error, Result};
use crate::hankel::{build_hankel, build_structured, ok_product, HankelSet};
use crate::numerics::{
    full_svd_bases, golden_section_min, mean_and_stderr, median, quantile, SubdifferentialBlocks, Svd,
};
use crate::realization::{select_order, OrderRule};
use crate::rng::{stream_rng, CALIBRATION_STREAM_BASE};
use crate::solver::{solve_constrained_problem, LsProblem, SolverConfig, Target};
use crate::theory::{chi_tail_bounds, lambda_bound, lambda_bound_optimized, ChiTailBounds, TheoryContext};

/// `t (T − 2t + 2)` cap for [`mc_sigma_h`].
pub const MAX_SIGMA_H_CELLS: usize = 400;
pub const MAX_WIDTH_T: usize = 8;
pub const MAX_NORMS_T: usize = 16;
pub const MAX_EXPERIMENT_T: usize = 10;
pub const MAX_EXPERIMENT_HORIZON: usize = 10_000;
pub const MAX_EXPERIMENT_REPLICATES: usize = 200;
pub const MAX_CALIBRATION_REPLICATES: usize = 2_000;
const CHI_CHUNK: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Worker threads; 0 uses the available parallelism.
    pub workers: usize,
}

impl McConfig {
    pub fn new(replicates: usize, seed: u64) -> Self {
        McConfig { replicates, seed, workers: 0 }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicates must be at least 1".into()));
        }
        Ok(())
    }

    /// Runs `f(i, rng_i)` for every replicate and returns the results in index order.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
    {
        self.run_streams(0, self.replicates, f)
    }

    fn run_streams<T, F>(&self, base: u64, count: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| {
            (0..count).into_par_iter().map(|i| f(i, &mut stream_rng(self.seed, base + i as u64))).collect()
        }))
    }
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Empirical second moment of `vec(H)` against `(T − 2t + 1) I`.
#[derive(Clone, Debug, Serialize)]
pub struct SigmaHSummary {
    pub t: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub n: usize,
    pub replicates: usize,
    pub max_offdiag: f64,
    pub diag_mean: f64,
    /// `max |Cov − n I|` over all entries.
    pub max_abs_deviation: f64,
    pub offdiag_tol: f64,
    pub diag_tol: f64,
    pub within_tolerance: bool,
    /// A single replicate gives a rank-one outer product.
    pub degenerate: bool,
    #[serde(skip)]
    pub covariance: DMatrix<f64>,
}

/// Samples `H_{s,r} = Σ_{s'<n} ε_{s,s'} z_{s'+r}` with Rademacher `ε` and standard
/// Gaussian `z`, `n = T − 2t + 1`, and accumulates `E[vec(H) vec(H)ᵀ]`.
pub fn mc_sigma_h(t: usize, horizon: usize, cfg: &McConfig) -> Result<SigmaHSummary> {
    cfg.validate()?;
    let n = crate::theory::sigma_h_spectrum(t, horizon)?;
    if t * (horizon + 2 - 2 * t) > MAX_SIGMA_H_CELLS {
        return Err(Error::ScaleGuard(format!(
            "t(T-2t+2) = {} exceeds {MAX_SIGMA_H_CELLS}",
            t * (horizon + 2 - 2 * t)
        )));
    }
    let dim = t * t;
    let chunks = cfg.replicates.div_ceil(1000);
    let partial = cfg.run_streams(0, chunks, |c, rng| {
        let mut acc = DMatrix::<f64>::zeros(dim, dim);
        let reps = 1000.min(cfg.replicates - c * 1000);
        for _ in 0..reps {
            let eps = DMatrix::from_fn(t, n, |_, _| if rng.random::<bool>() { 1.0 } else { -1.0 });
            let z: Vec<f64> = (0..n + t - 1).map(|_| StandardNormal.sample(rng)).collect();
            let hankel = DMatrix::from_fn(n, t, |i, j| z[i + j]);
            let h = eps * hankel;
            let v = DVector::from_column_slice(h.as_slice());
            acc.ger(1.0, &v, &v, 1.0);
        }
        acc
    })?;
    let cov = partial.into_iter().fold(DMatrix::zeros(dim, dim), |a, b| a + b) / cfg.replicates as f64;
    let nf = n as f64;
    let mut max_offdiag = 0.0f64;
    let mut max_abs_deviation = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            let target = if i == j { nf } else { 0.0 };
            max_abs_deviation = max_abs_deviation.max((cov[(i, j)] - target).abs());
            if i != j {
                max_offdiag = max_offdiag.max(cov[(i, j)].abs());
            }
        }
    }
    let diag_mean = cov.diagonal().mean();
    let scale = (nf * (nf + 1.0)).sqrt() / (cfg.replicates as f64).sqrt();
    let (offdiag_tol, diag_tol) = (4.0 * scale, 3.0 * scale);
    Ok(SigmaHSummary {
        t,
        horizon,
        n,
        replicates: cfg.replicates,
        max_offdiag,
        diag_mean,
        max_abs_deviation,
        offdiag_tol,
        diag_tol,
        within_tolerance: max_offdiag <= offdiag_tol && (diag_mean - nf).abs() <= diag_tol,
        degenerate: cfg.replicates == 1,
        covariance: cov,
    })
}

/// Orthonormal blocks of the singular bases at a rank-`r` point.
#[derive(Clone, Debug)]
pub struct DescentConeSpec {
    pub u1: DMatrix<f64>,
    pub u2: DMatrix<f64>,
    pub v1: DMatrix<f64>,
    pub v2: DMatrix<f64>,
    pub r: usize,
}

impl DescentConeSpec {
    /// Cone at `m`, with singular values below `rank_tol · σ₁` treated as zero.
    pub fn from_matrix(m: &DMatrix<f64>, rank_tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch(format!("descent cone needs a square matrix, got {:?}", m.shape())));
        }
        let (u, s, v) = full_svd_bases(m);
        let r = crate::numerics::numerical_rank(s.as_slice(), rank_tol);
        Ok(Self::split(u, v, r))
    }

    /// Cone at a rank-`r` point with Haar-distributed singular bases.
    pub fn random<R: Rng + ?Sized>(t: usize, r: usize, rng: &mut R) -> Result<Self> {
        if r > t {
            return Err(Error::InvalidArgument(format!("rank {r} exceeds dimension {t}")));
        }
        let haar = |rng: &mut R| {
            let qr = gaussian_matrix(t, t, rng).qr();
            let signs = qr.r().diagonal().map(|d| if d < 0.0 { -1.0 } else { 1.0 });
            qr.q() * DMatrix::from_diagonal(&signs)
        };
        let u = haar(rng);
        let v = haar(rng);
        Ok(Self::split(u, v, r))
    }

    fn split(u: DMatrix<f64>, v: DMatrix<f64>, r: usize) -> Self {
        let t = u.nrows();
        DescentConeSpec {
            u1: u.columns(0, r).into_owned(),
            u2: u.columns(r, t - r).into_owned(),
            v1: v.columns(0, r).into_owned(),
            v2: v.columns(r, t - r).into_owned(),
            r,
        }
    }

    pub fn t(&self) -> usize {
        self.u1.nrows()
    }

    fn u(&self) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(self.t(), self.t());
        u.columns_mut(0, self.r).copy_from(&self.u1);
        u.columns_mut(self.r, self.t() - self.r).copy_from(&self.u2);
        u
    }

    fn v(&self) -> DMatrix<f64> {
        let mut v = DMatrix::zeros(self.t(), self.t());
        v.columns_mut(0, self.r).copy_from(&self.v1);
        v.columns_mut(self.r, self.t() - self.r).copy_from(&self.v2);
        v
    }

    /// Largest deviation of `[U1 U2]` and `[V1 V2]` from orthogonality.
    pub fn orthogonality_error(&self) -> f64 {
        let id = DMatrix::identity(self.t(), self.t());
        let eu = (self.u().transpose() * self.u() - &id).amax();
        let ev = (self.v().transpose() * self.v() - &id).amax();
        eu.max(ev)
    }
}

/// `dist(G, cone(∂‖·‖_*))` at the point described by `cone`, which equals the
/// supremum of `⟨G, D⟩` over unit-norm `D` in the descent cone.
pub fn dist_to_polar(g: &DMatrix<f64>, cone: &DescentConeSpec) -> f64 {
    let rotated = cone.u().transpose() * g * cone.v();
    let blocks = SubdifferentialBlocks::from_rotated(&rotated, cone.r);
    polar_distance(&blocks).sqrt()
}

/// `min_{τ ≥ 0} dist²(G, τ ∂‖·‖_*)` from the rotated blocks.
fn polar_distance(blocks: &SubdifferentialBlocks) -> f64 {
    let r = blocks.rank;
    if blocks.g22_singular_values.is_empty() {
        // full rank: projection onto the ray spanned by the identity block
        let tau = (blocks.g11.trace() / r as f64).max(0.0);
        return blocks.dist_sq(tau);
    }
    let top = blocks.g22_singular_values[0];
    let centre = if r > 0 { blocks.g11.trace() / r as f64 } else { 0.0 };
    let hi = top.max(centre).max(0.0) + 1.0;
    let (_, d) = golden_section_min(|tau| blocks.dist_sq(tau), 0.0, hi, 1e-10 * hi);
    d.max(0.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct WidthEstimate {
    pub t: usize,
    pub r: usize,
    pub replicates: usize,
    pub width: f64,
    pub width_se: f64,
    pub dimension: f64,
    pub dimension_se: f64,
}

impl WidthEstimate {
    /// `width² ≤ dimension ≤ width² + 1`, each side relaxed by `k` standard errors
    /// of the difference.
    pub fn sandwich_holds(&self, k: f64) -> bool {
        let w2 = self.width * self.width;
        // delta method for width², plus the dimension error
        let se = (2.0 * self.width * self.width_se).hypot(self.dimension_se);
        w2 <= self.dimension + k * se && self.dimension <= w2 + 1.0 + k * se
    }
}

/// Mean of `dist(G, polar)` (width) and of its square (statistical dimension)
/// over standard Gaussian `G`.
pub fn mc_width(cone: &DescentConeSpec, cfg: &McConfig) -> Result<WidthEstimate> {
    cfg.validate()?;
    let t = cone.t();
    if t > MAX_WIDTH_T {
        return Err(Error::ScaleGuard(format!("mc_width is limited to t <= {MAX_WIDTH_T}, got {t}")));
    }
    let d = cfg.run(|_, rng| dist_to_polar(&gaussian_matrix(t, t, rng), cone))?;
    let d2: Vec<f64> = d.iter().map(|v| v * v).collect();
    let (width, width_se) = mean_and_stderr(&d);
    let (dimension, dimension_se) = mean_and_stderr(&d2);
    Ok(WidthEstimate { t, r: cone.r, replicates: cfg.replicates, width, width_se, dimension, dimension_se })
}

#[derive(Clone, Debug, Serialize)]
pub struct HNormsEstimate {
    pub t: usize,
    pub replicates: usize,
    pub op_mean: f64,
    pub op_se: f64,
    pub op_sq_mean: f64,
    pub op_sq_se: f64,
    pub fro_sq_mean: f64,
    pub fro_sq_se: f64,
    /// `2√t`.
    pub op_mean_bound: f64,
    /// `t²`, the exact value of `E‖H̃‖²_F`.
    pub fro_sq_exact: f64,
    /// `2t`, the value used by the width bound.
    pub fro_sq_stated: f64,
}

impl HNormsEstimate {
    /// Both sides of `E‖H̃‖² ≤ (1 + 1/(2ct)) (E‖H̃‖)² + E‖H̃‖` at the empirical moments.
    pub fn concentration_sides(&self, c: f64) -> (f64, f64) {
        let t = self.t as f64;
        (self.op_sq_mean, (1.0 + 1.0 / (2.0 * c * t)) * self.op_mean.powi(2) + self.op_mean)
    }
}

/// Moments of `‖H̃‖` and `‖H̃‖_F` for a `t × t` standard Gaussian `H̃`.
pub fn mc_h_norms(t: usize, cfg: &McConfig) -> Result<HNormsEstimate> {
    cfg.validate()?;
    if t == 0 || t > MAX_NORMS_T {
        return Err(Error::ScaleGuard(format!("mc_h_norms needs 1 <= t <= {MAX_NORMS_T}, got {t}")));
    }
    let samples = cfg.run(|_, rng| {
        let h = gaussian_matrix(t, t, rng);
        (Svd::new(&h).s[0], h.norm_squared())
    })?;
    let op: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let op_sq: Vec<f64> = op.iter().map(|v| v * v).collect();
    let fro: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (op_mean, op_se) = mean_and_stderr(&op);
    let (op_sq_mean, op_sq_se) = mean_and_stderr(&op_sq);
    let (fro_sq_mean, fro_sq_se) = mean_and_stderr(&fro);
    let tf = t as f64;
    Ok(HNormsEstimate {
        t,
        replicates: cfg.replicates,
        op_mean,
        op_se,
        op_sq_mean,
        op_sq_se,
        fro_sq_mean,
        fro_sq_se,
        op_mean_bound: 2.0 * tf.sqrt(),
        fro_sq_exact: tf * tf,
        fro_sq_stated: 2.0 * tf,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ChiTailEstimate {
    pub samples: usize,
    pub bounds: ChiTailBounds,
    pub upper_freq: f64,
    pub lower_freq: f64,
}

impl ChiTailEstimate {
    pub fn dominated(&self) -> bool {
        self.upper_freq <= self.bounds.upper_prob && self.lower_freq <= self.bounds.lower_prob
    }
}

/// Empirical frequencies of `χ(ν) ≥ √ν + √(2s)` and `χ(ν) ≤ √(uν)` over `samples`
/// draws (split into fixed chunks, one stream per chunk).
pub fn mc_chi_tails(nu: usize, s: f64, u: f64, samples: usize, cfg: &McConfig) -> Result<ChiTailEstimate> {
    let bounds = chi_tail_bounds(nu as f64, s, u)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    let chunks = samples.div_ceil(CHI_CHUNK);
    let counts = cfg.run_streams(0, chunks, |c, rng| {
        let m = CHI_CHUNK.min(samples - c * CHI_CHUNK);
        let (mut up, mut lo) = (0usize, 0usize);
        for _ in 0..m {
            let chi = (0..nu).map(|_| StandardNormal.sample(rng)).map(|z: f64| z * z).sum::<f64>().sqrt();
            up += (chi >= bounds.upper_threshold) as usize;
            lo += (chi <= bounds.lower_threshold) as usize;
        }
        (up, lo)
    })?;
    let (up, lo) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(ChiTailEstimate {
        samples,
        bounds,
        upper_freq: up as f64 / samples as f64,
        lower_freq: lo as f64 / samples as f64,
    })
}

/// Empirical `Q_ξ(D) = (1/t) Σ_s P(|⟨D_s, z⟩| ≥ ξ)` with one standard Gaussian `z` per replicate.
pub fn mc_q_xi(d: &DMatrix<f64>, xi: f64, cfg: &McConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    let t = d.ncols();
    let freq = cfg.run(|_, rng| {
        let z = DVector::from_fn(t, |_, _| StandardNormal.sample(rng));
        (d * z).iter().filter(|v| v.abs() >= xi).count() as f64 / d.nrows() as f64
    })?;
    Ok(mean_and_stderr(&freq))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentOptions {
    pub c: f64,
    /// `None` maximizes `Λ` over `ξ`.
    pub xi: Option<f64>,
    pub order_rule: OrderRule,
    pub calibration_replicates: usize,
    /// Multiplies the nuisance `𝒪Ā₀ + 𝒩E` in `X_future`; values below 1 give the low-noise regime.
    pub nuisance_scale: f64,
    pub solver: SolverConfig,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            c: 1.0,
            xi: None,
            order_rule: OrderRule::default(),
            calibration_replicates: 200,
            nuisance_scale: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentRow {
    pub replicate: usize,
    pub nuisance_fro: f64,
    pub eta: f64,
    pub event_holds: bool,
    /// `false` when `η` lies below the least-squares residual floor; the estimate
    /// columns then hold the least-squares solution, its `η → floor` limit.
    pub feasible: bool,
    pub error_fro: Option<f64>,
    pub rel_error: Option<f64>,
    pub residual_fro: Option<f64>,
    pub lambda: Option<f64>,
    pub converged: Option<bool>,
    pub rank_l_hat: Option<usize>,
    pub p_hat: Option<usize>,
    /// `‖𝒪𝒦 − L̂‖ / 2η`.
    pub error_over_2eta: Option<f64>,
    /// `2η/Λ` when `Λ > 0`.
    pub theory_bound: Option<f64>,
    pub theory_bound_holds: Option<bool>,
    /// `2η / σ_min(X_past)`, valid whenever the event holds.
    pub design_bound: f64,
    pub design_bound_holds: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentSummary {
    pub model: ArmaModel,
    pub t: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub nu: f64,
    pub replicates: usize,
    pub seed: u64,
    pub true_order: usize,
    pub eta: f64,
    pub eta_quantile_level: f64,
    pub calibration_replicates: usize,
    pub nuisance_scale: f64,
    pub xi: f64,
    pub xi_optimized: bool,
    pub c: f64,
    #[serde(rename = "Lambda")]
    pub lambda: f64,
    pub vacuous: bool,
    pub infeasible: usize,
    pub event_violations: usize,
    pub event_violation_rate: f64,
    pub event_budget: f64,
    pub event_budget_tolerance: f64,
    pub event_within_budget: bool,
    pub theory_bound_violations: Option<usize>,
    pub design_bound_violations: usize,
    pub median_error: Option<f64>,
    pub mean_error: Option<f64>,
    pub mean_rel_error: Option<f64>,
    pub max_error_over_2eta: Option<f64>,
    pub p_hat_match_rate: f64,
    pub provenance: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentResult {
    pub summary: ExperimentSummary,
    pub rows: Vec<ExperimentRow>,
}

impl ExperimentResult {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_summary_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.summary)?;
        Ok(())
    }
}

/// One simulated Hankel set with its truth.
struct Instance {
    hs: HankelSet,
    ok: DMatrix<f64>,
    nuisance_fro: f64,
}

fn instance<R: Rng + ?Sized>(model: &ArmaModel, t: usize, horizon: usize, scale: f64, rng: &mut R) -> Result<Instance> {
    let traj = model.simulate_with_rng(horizon, rng)?;
    let ss = model.to_state_space().with_initial_state_from(&traj)?;
    let mut hs = build_hankel(&traj, t)?;
    let sm = build_structured(&ss, &hs)?;
    let ok = sm.ok();
    let nuisance = sm.nuisance(&hs)? * scale;
    if scale != 1.0 {
        hs.x_future = &ok * &hs.x_past + &nuisance;
    }
    Ok(Instance { hs, ok, nuisance_fro: nuisance.norm() })
}

/// `η` as the `1 − e^{−ν²/2}` quantile of `‖𝒪Ā₀ + 𝒩E‖_F` over calibration replicates
/// drawn from streams disjoint from the experiment's.
pub fn calibrate_eta(
    model: &ArmaModel,
    t: usize,
    horizon: usize,
    nu: f64,
    scale: f64,
    count: usize,
    cfg: &McConfig,
) -> Result<f64> {
    if count == 0 || count > MAX_CALIBRATION_REPLICATES {
        return Err(Error::ScaleGuard(format!(
            "calibration replicates must lie in 1..={MAX_CALIBRATION_REPLICATES}, got {count}"
        )));
    }
    let norms = cfg
        .run_streams(CALIBRATION_STREAM_BASE, count, |_, rng| {
            instance(model, t, horizon, scale, rng).map(|i| i.nuisance_fro)
        })?
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    Ok(quantile(&norms, 1.0 - (-nu * nu / 2.0).exp()))
}

/// Simulates `replicates` trajectories, solves the constrained problem at the
/// calibrated `η` and compares the error with `2η/Λ` and `2η/σ_min(X_past)`.
pub fn mc_estimation_experiment(
    model: &ArmaModel,
    t: usize,
    horizon: usize,
    nu: f64,
    cfg: &McConfig,
    opts: &ExperimentOptions,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    if t > MAX_EXPERIMENT_T || horizon > MAX_EXPERIMENT_HORIZON || cfg.replicates > MAX_EXPERIMENT_REPLICATES {
        return Err(Error::ScaleGuard(format!(
            "experiments are limited to t <= {MAX_EXPERIMENT_T}, T <= {MAX_EXPERIMENT_HORIZON}, replicates <= {MAX_EXPERIMENT_REPLICATES} (got t={t}, T={horizon}, replicates={})",
            cfg.replicates
        )));
    }
    if !(nu > 0.0) || !(opts.nuisance_scale >= 0.0) {
        return Err(Error::InvalidArgument("nu must be positive and nuisance_scale non-negative".into()));
    }
    let eta = calibrate_eta(model, t, horizon, nu, opts.nuisance_scale, opts.calibration_replicates, cfg)?;
    let true_order = Svd::new(&ok_product(&model.to_state_space(), t)).rank(1e-10);
    let ctx = TheoryContext::from_model(model, t, horizon, opts.c, opts.xi.unwrap_or(1.0), nu)?;
    let report = match (opts.xi, true_order) {
        (_, 0) => None,
        (Some(_), r) => Some(lambda_bound(&ctx, r, eta)?),
        (None, r) => Some(lambda_bound_optimized(&ctx, r, eta)?),
    };
    let lambda = report.as_ref().map_or(f64::NEG_INFINITY, |r| r.lambda);
    let theory_bound = report.as_ref().and_then(|r| r.error_bound);
    let solver_cfg = SolverConfig { target: Target::Eta(eta), ..opts.solver.clone() };

    let rows = cfg
        .run(|i, rng| -> Result<ExperimentRow> {
            let inst = instance(model, t, horizon, opts.nuisance_scale, rng)?;
            let problem = LsProblem::from_hankel(&inst.hs)?;
            let sigma_min_x = Svd::new(&inst.hs.x_past).s.min();
            let event_holds = inst.nuisance_fro <= eta;
            let design_bound = 2.0 * eta / sigma_min_x;
            let mut row = ExperimentRow {
                replicate: i,
                nuisance_fro: inst.nuisance_fro,
                eta,
                event_holds,
                feasible: false,
                error_fro: None,
                rel_error: None,
                residual_fro: None,
                lambda: None,
                converged: None,
                rank_l_hat: None,
                p_hat: None,
                error_over_2eta: None,
                theory_bound,
                theory_bound_holds: None,
                design_bound,
                design_bound_holds: None,
            };
            let res = match solve_constrained_problem(&problem, &solver_cfg) {
                Err(Error::Infeasible { .. }) => None,
                Err(e) => return Err(e),
                Ok(res) => Some(res),
            };
            row.feasible = res.is_some();
            let (l_hat, residual, lam, converged) = match &res {
                Some(r) => (r.l_hat.clone(), r.residual_fro, r.lambda, r.converged),
                None => (problem.ls_solution().clone(), problem.floor(), 0.0, true),
            };
            let sv = Svd::new(&l_hat).s.as_slice().to_vec();
            let err = (&inst.ok - &l_hat).norm();
            row.error_fro = Some(err);
            row.rel_error = Some(err / inst.ok.norm());
            row.residual_fro = Some(residual);
            row.lambda = Some(lam);
            row.converged = Some(converged);
            row.rank_l_hat = Some(crate::numerics::numerical_rank(&sv, solver_cfg.rank_threshold));
            row.p_hat = Some(select_order(&sv, opts.order_rule));
            row.error_over_2eta = Some(err / (2.0 * eta));
            if event_holds {
                row.theory_bound_holds = theory_bound.map(|b| err <= b);
                row.design_bound_holds = Some(err <= design_bound * (1.0 + 1e-9));
            }
            Ok(row)
        })?
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let reps = rows.len() as f64;
    let budget = (-nu * nu / 2.0).exp();
    let event_violations = rows.iter().filter(|r| !r.event_holds).count();
    let rate = event_violations as f64 / reps;
    let budget_tol = 3.0 * (budget * (1.0 - budget) / reps).sqrt();
    let errors: Vec<f64> = rows.iter().filter_map(|r| r.error_fro).collect();
    let rel: Vec<f64> = rows.iter().filter_map(|r| r.rel_error).collect();
    let ratio_max =
        rows.iter().filter_map(|r| r.error_over_2eta).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    let provenance = BTreeMap::from(
        [
            ("nuisance_fro", "monte-carlo: exact nuisance of the simulated replicate"),
            ("eta", "monte-carlo: calibration quantile"),
            ("error_fro", "monte-carlo: constrained estimate against the exact product"),
            ("theory_bound", "closed-form"),
            ("design_bound", "closed-form in the replicate's design matrix"),
        ]
        .map(|(k, v)| (k.to_string(), v.to_string())),
    );
    let mut notes = Vec::new();
    if report.as_ref().is_none_or(|r| r.vacuous) {
        notes.push(format!("Lambda = {lambda} <= 0: the theoretical error bound is vacuous for this instance"));
    }
    let summary = ExperimentSummary {
        model: model.clone(),
        t,
        horizon,
        nu,
        replicates: rows.len(),
        seed: cfg.seed,
        true_order,
        eta,
        eta_quantile_level: 1.0 - budget,
        calibration_replicates: opts.calibration_replicates,
        nuisance_scale: opts.nuisance_scale,
        xi: report.as_ref().map_or(ctx.xi, |r| r.xi),
        xi_optimized: opts.xi.is_none(),
        c: opts.c,
        lambda,
        vacuous: theory_bound.is_none(),
        infeasible: rows.iter().filter(|r| !r.feasible).count(),
        event_violations,
        event_violation_rate: rate,
        event_budget: budget,
        event_budget_tolerance: budget_tol,
        event_within_budget: rate <= budget + budget_tol,
        theory_bound_violations: theory_bound
            .map(|_| rows.iter().filter(|r| r.theory_bound_holds == Some(false)).count()),
        design_bound_violations: rows.iter().filter(|r| r.design_bound_holds == Some(false)).count(),
        median_error: (!errors.is_empty()).then(|| median(&errors)),
        mean_error: (!errors.is_empty()).then(|| mean_and_stderr(&errors).0),
        mean_rel_error: (!rel.is_empty()).then(|| mean_and_stderr(&rel).0),
        max_error_over_2eta: ratio_max,
        p_hat_match_rate: rows.iter().filter(|r| r.p_hat == Some(true_order)).count() as f64 / reps,
        provenance,
        notes,
    };
    Ok(ExperimentResult { summary, rows })
}
