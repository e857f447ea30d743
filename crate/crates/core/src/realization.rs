//! Order selection and state-space realization from an estimate of `𝒪𝒦`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arma::StateSpaceModel;
use crate::error::{Error, Result};
use crate::numerics::Svd;

/// Shift systems with a larger condition number are flagged.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderRule {
    /// Count singular values at or above `threshold · σ₁`.
    Threshold(f64),
    /// Position of the largest ratio `σ_i / σ_{i+1}`.
    LogGap,
}

impl Default for OrderRule {
    fn default() -> Self {
        OrderRule::Threshold(1e-6)
    }
}

/// Number of singular values at or above `threshold · σ₁`.
pub fn estimate_order(singular_values: &[f64], threshold: f64) -> usize {
    crate::numerics::numerical_rank(singular_values, threshold)
}

/// `argmax_i ln(σ_i / σ_{i+1})` over `i = 1 .. len-1`; exact zeros make the gap infinite.
pub fn estimate_order_log_gap(singular_values: &[f64]) -> usize {
    let Some(&top) = singular_values.first() else { return 0 };
    if top <= 0.0 {
        return 0;
    }
    if singular_values.len() == 1 {
        return 1;
    }
    let mut best = (1, f64::NEG_INFINITY);
    for (i, w) in singular_values.windows(2).enumerate() {
        let gap = if w[1] <= 0.0 { f64::INFINITY } else { (w[0] / w[1]).ln() };
        if gap > best.1 {
            best = (i + 1, gap);
        }
        if w[1] <= 0.0 {
            break;
        }
    }
    best.0
}

pub fn select_order(singular_values: &[f64], rule: OrderRule) -> usize {
    match rule {
        OrderRule::Threshold(th) => estimate_order(singular_values, th),
        OrderRule::LogGap => estimate_order_log_gap(singular_values),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RealizationResult {
    pub p_hat: usize,
    pub model: StateSpaceModel,
    /// `σ_{p̂+1} / σ_{p̂}` of `L̂` (0 when `p̂ = t`).
    pub sv_gap: f64,
    /// `‖L̂ − 𝒪̂𝒦̂‖_F`.
    pub fit_residual: f64,
    /// Condition number of the shift system solved for `Â`.
    pub shift_condition: f64,
    pub ill_conditioned: bool,
}

impl RealizationResult {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

/// Balanced realization of order `p_hat`: `𝒪̂ = U_p S_p^{1/2}`, `𝒦̂ = S_p^{1/2} V_pᵀ`,
/// `B̂` the first row of `𝒪̂`, `Â` from the shift equation `𝒪̂↓ Â = 𝒪̂↑`, `K̂` the
/// last column of `𝒦̂`. The initial state is zero and the noise variance is set to 1.
pub fn realize(l_hat: &DMatrix<f64>, p_hat: usize) -> Result<RealizationResult> {
    let t = l_hat.nrows();
    if !l_hat.is_square() {
        return Err(Error::ShapeMismatch(format!("estimate must be square, got {:?}", l_hat.shape())));
    }
    if p_hat == 0 || p_hat >= t {
        return Err(Error::InvalidArgument(format!(
            "order must lie in 1..={} for a depth-{t} estimate, got {p_hat}",
            t.saturating_sub(1)
        )));
    }
    let svd = Svd::new(l_hat);
    let mut o = svd.u.columns(0, p_hat).into_owned();
    let mut kc = svd.v_t.rows(0, p_hat).into_owned();
    for i in 0..p_hat {
        let root = svd.s[i].sqrt();
        o.column_mut(i).scale_mut(root);
        kc.row_mut(i).scale_mut(root);
    }
    let sv_gap = if p_hat < svd.s.len() && svd.s[p_hat - 1] > 0.0 { svd.s[p_hat] / svd.s[p_hat - 1] } else { 0.0 };
    let fit_residual = (l_hat - &o * &kc).norm();
    let (model, shift_condition) = realize_from_factors(&o, &kc)?;
    Ok(RealizationResult {
        p_hat,
        model,
        sv_gap,
        fit_residual,
        shift_condition,
        ill_conditioned: !(shift_condition <= CONDITION_LIMIT),
    })
}

pub fn realize_with_rule(l_hat: &DMatrix<f64>, rule: OrderRule) -> Result<RealizationResult> {
    let svd = Svd::new(l_hat);
    let p = select_order(svd.s.as_slice(), rule).min(l_hat.nrows().saturating_sub(1));
    if p == 0 {
        return Err(Error::InvalidArgument("estimate has numerical rank 0; nothing to realize".into()));
    }
    realize(l_hat, p)
}

/// Model `(Â, B̂, K̂)` from observability and controllability factors, with the
/// condition number of the shift system.
pub fn realize_from_factors(o: &DMatrix<f64>, kc: &DMatrix<f64>) -> Result<(StateSpaceModel, f64)> {
    let (t, p) = o.shape();
    let upper = o.rows(0, t - 1).into_owned();
    let lower = o.rows(1, t - 1).into_owned();
    let svd = Svd::new(&upper);
    let condition = if svd.s[p - 1] > 0.0 { svd.s[0] / svd.s[p - 1] } else { f64::INFINITY };
    let a = upper.pseudo_inverse(1e-14 * svd.s[0]).map_err(|e| Error::Numerical(e.to_string()))? * lower;
    let b = o.rows(0, 1).into_owned();
    let k = kc.columns(kc.ncols() - 1, 1).into_owned();
    let model = StateSpaceModel::new(a, b, k, DVector::zeros(p), 1.0)?;
    Ok((model, condition))
}
