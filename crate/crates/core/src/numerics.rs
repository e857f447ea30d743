//! Small dense linear-algebra and 1-D optimization helpers shared by the modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Singular value decomposition with singular values sorted non-increasing.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v_t: DMatrix<f64>,
}

impl Svd {
    pub fn new(m: &DMatrix<f64>) -> Self {
        let (rows, cols) = m.shape();
        let k = rows.min(cols);
        if k == 0 {
            return Svd { u: DMatrix::zeros(rows, 0), s: DVector::zeros(0), v_t: DMatrix::zeros(0, cols) };
        }
        let svd = m.clone().svd(true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let s = svd.singular_values;

        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        let mut su = DMatrix::zeros(rows, k);
        let mut sv = DMatrix::zeros(k, cols);
        let mut ss = DVector::zeros(k);
        for (dst, &src) in order.iter().enumerate() {
            su.set_column(dst, &u.column(src));
            sv.set_row(dst, &v_t.row(src));
            ss[dst] = s[src];
        }
        Svd { u: su, s: ss, v_t: sv }
    }

    /// Number of singular values at or above `rel_tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        numerical_rank(self.s.as_slice(), rel_tol)
    }

    /// Rebuilds `U diag(f(s)) Vᵀ`.
    pub fn recompose(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (j, mut col) in us.column_iter_mut().enumerate() {
            col *= f(self.s[j]);
        }
        us * &self.v_t
    }
}

pub fn numerical_rank(sorted_values: &[f64], rel_tol: f64) -> usize {
    match sorted_values.first() {
        Some(&top) if top > 0.0 => sorted_values.iter().filter(|&&v| v >= rel_tol * top).count(),
        _ => 0,
    }
}

/// Full SVD of a square matrix: `u` and `v` are complete orthogonal bases.
pub fn full_square_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    debug_assert!(m.is_square());
    let svd = Svd::new(m);
    (svd.u, svd.s, svd.v_t.transpose())
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    Svd::new(m).s[0]
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    Svd::new(m).s.sum()
}

/// Largest eigenvalue modulus of a square matrix (0 for the empty matrix).
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `G` rotated into the singular bases of `L`: with `L = U diag(s) Vᵀ` of rank `r`,
/// `Uᵀ G V = [[G11, G12], [G21, G22]]` where `G11` is `r × r`.
///
/// The nuclear-norm subdifferential at `L` is `U₁V₁ᵀ + {U₂ W V₂ᵀ : ‖W‖ ≤ 1}`, so the
/// squared distance from `G` to `τ ∂‖L‖_*` only needs `G11`, the off-diagonal
/// mass and the singular values of `G22`.
#[derive(Clone, Debug)]
pub struct SubdifferentialBlocks {
    pub rank: usize,
    pub g11: DMatrix<f64>,
    pub off_diagonal_sq: f64,
    pub g22_singular_values: Vec<f64>,
}

impl SubdifferentialBlocks {
    /// Singular values of `L` below `rank_tol * s_max` count as zero.
    pub fn new(l: &DMatrix<f64>, g: &DMatrix<f64>, rank_tol: f64) -> Self {
        assert_eq!(l.shape(), g.shape(), "L and G must have the same shape");
        let (u, s, v) = full_svd_bases(l);
        let rank = numerical_rank(s.as_slice(), rank_tol);
        Self::from_rotated(&(u.transpose() * g * v), rank)
    }

    /// Blocks of an already rotated matrix `Uᵀ G V` for a rank-`rank` point.
    pub fn from_rotated(rotated: &DMatrix<f64>, rank: usize) -> Self {
        let (m, n) = rotated.shape();
        let g11 = rotated.view((0, 0), (rank, rank)).into_owned();
        let off_diagonal_sq = rotated.view((0, rank), (rank, n - rank)).norm_squared()
            + rotated.view((rank, 0), (m - rank, rank)).norm_squared();
        let g22 = rotated.view((rank, rank), (m - rank, n - rank)).into_owned();
        let g22_singular_values = Svd::new(&g22).s.as_slice().to_vec();
        SubdifferentialBlocks { rank, g11, off_diagonal_sq, g22_singular_values }
    }

    /// `dist(G, τ ∂‖L‖_*)²`.
    pub fn dist_sq(&self, tau: f64) -> f64 {
        let mut d = self.off_diagonal_sq;
        for i in 0..self.rank {
            for j in 0..self.rank {
                let target = if i == j { tau } else { 0.0 };
                d += (self.g11[(i, j)] - target).powi(2);
            }
        }
        d + self.g22_singular_values.iter().map(|&s| (s - tau).max(0.0).powi(2)).sum::<f64>()
    }
}

/// Complete orthogonal bases `U` (`m × m`), `V` (`n × n`) and the singular values of `m`.
pub fn full_svd_bases(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = m.shape();
    let svd = Svd::new(m);
    let complete = |partial: DMatrix<f64>, dim: usize| -> DMatrix<f64> {
        if partial.ncols() == dim {
            return partial;
        }
        // orthogonal complement from the QR of [partial | I]
        let mut aug = DMatrix::zeros(dim, partial.ncols() + dim);
        aug.view_mut((0, 0), (dim, partial.ncols())).copy_from(&partial);
        aug.view_mut((0, partial.ncols()), (dim, dim)).fill_with_identity();
        let q = aug.qr().q();
        let mut out = q.columns(0, dim).into_owned();
        out.view_mut((0, 0), (dim, partial.ncols())).copy_from(&partial);
        out
    };
    let u = complete(svd.u, rows);
    let v = complete(svd.v_t.transpose(), cols);
    (u, svd.s, v)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// `V diag(f(λ)) Vᵀ` for a symmetric matrix.
pub fn sym_function(vals: &DVector<f64>, vecs: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let mut scaled = vecs.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f(vals[j]);
    }
    scaled * vecs.transpose()
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
pub fn golden_section_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // endpoints can win when the minimum sits on the boundary
    [(x, fx), (lo, f(lo)), (hi, f(hi))].into_iter().min_by(|p, q| p.1.total_cmp(&q.1)).unwrap()
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Median of a slice (NaNs sort last).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}
