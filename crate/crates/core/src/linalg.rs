//! Small dense linear-algebra helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Systems whose estimated condition number exceeds this are rejected.
pub const MAX_CONDITION: f64 = 1e14;

/// Cholesky factor of a symmetric positive-definite matrix together with a
/// cheap condition estimate taken from the spread of the factor's diagonal.
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    cond_estimate: f64,
}

impl SpdFactor {
    /// Factors `a`, returning `None` if it is not numerically positive definite
    /// or if the condition estimate is above [`MAX_CONDITION`].
    pub fn new(a: DMatrix<f64>) -> Option<Self> {
        let n = a.nrows();
        let chol = Cholesky::new(a)?;
        let l = chol.l_dirty();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let cond_estimate = if n == 0 { 1.0 } else { (hi / lo).powi(2) };
        if cond_estimate > MAX_CONDITION {
            return None;
        }
        Some(SpdFactor {
            chol,
            cond_estimate,
        })
    }

    pub fn cond_estimate(&self) -> f64 {
        self.cond_estimate
    }

    /// log-determinant of the factored matrix.
    pub fn log_det(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// `L⁻¹ b` for the lower Cholesky factor `L`.
    pub fn solve_lower_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = b.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut x);
        x
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let mut inv = self.chol.inverse();
        symmetrize(&mut inv);
        inv
    }
}

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Largest absolute entry of `a - b`, divided by the largest absolute entry of
/// `b` (or 1 when `b` is tiny).
pub fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale
}

/// Gathers the listed columns of `phi` into a new matrix.
pub fn select_columns(phi: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let m = phi.nrows();
    let mut out = DMatrix::zeros(m, cols.len());
    for (k, &c) in cols.iter().enumerate() {
        out.column_mut(k).copy_from(&phi.column(c));
    }
    out
}

/// Gathers the listed entries of `v`.
pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}
