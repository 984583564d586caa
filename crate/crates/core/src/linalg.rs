//! Dense linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{GridError, Result};

/// Relative singular-value cutoff used for every rank decision.
pub const RANK_RTOL: f64 = 1e-8;

/// Thin singular value decomposition `A = U diag(s) Vᵀ` with `s` sorted in
/// decreasing order and a full square `V`.
///
/// Computed by one-sided (Hestenes) Jacobi rotations, which stay accurate on
/// the small dense matrices used here. nalgebra's bidiagonal SVD returned
/// factorizations with O(1e-2) reconstruction error on some of them.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `m × n`; columns with a zero singular value are zero.
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut w = a.clone();
        let mut v = DMatrix::<f64>::identity(n, n);
        for _sweep in 0..80 {
            let mut rotated = false;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha = w.column(p).norm_squared();
                    let beta = w.column(q).norm_squared();
                    let gamma = w.column(p).dot(&w.column(q));
                    if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for mat in [&mut w, &mut v] {
                        for r in 0..mat.nrows() {
                            let (x, y) = (mat[(r, p)], mat[(r, q)]);
                            mat[(r, p)] = c * x - s * y;
                            mat[(r, q)] = s * x + c * y;
                        }
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let norms: Vec<f64> = (0..n).map(|j| w.column(j).norm()).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
        let mut u = DMatrix::zeros(m, n);
        let mut vs = DMatrix::zeros(n, n);
        for (k, &j) in order.iter().enumerate() {
            if norms[j] > 0.0 {
                u.set_column(k, &(w.column(j) / norms[j]));
            }
            vs.set_column(k, &v.column(j));
        }
        Self {
            u,
            s: DVector::from_iterator(n, order.iter().map(|&j| norms[j])),
            v: vs,
        }
    }

    /// Number of singular values above `RANK_RTOL · σ_max`.
    pub fn rank(&self) -> usize {
        let smax = self.s.iter().copied().fold(0.0, f64::max);
        if smax == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > RANK_RTOL * smax).count()
    }

    /// Pseudo-inverse solution restricted to the numerical rank.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = DVector::zeros(self.v.nrows());
        for k in 0..self.rank() {
            let coef = self.u.column(k).dot(b) / self.s[k];
            x += self.v.column(k) * coef;
        }
        x
    }
}

pub fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    Svd::new(a).rank()
}

/// Orthonormal basis of the null space of `a` (columns).
pub fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    if a.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let svd = Svd::new(a);
    let r = svd.rank();
    svd.v.columns(r, n - r).into_owned()
}

/// Least-squares solve that refuses rank-deficient systems.
pub fn lstsq_full_rank(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let n = a.ncols();
    if a.nrows() < n {
        return Err(GridError::RankDeficient {
            rank: a.nrows(),
            needed: n,
        });
    }
    let svd = Svd::new(a);
    let rank = svd.rank();
    if rank < n {
        return Err(GridError::RankDeficient { rank, needed: n });
    }
    Ok(svd.solve(b))
}

/// Minimum-norm least-squares solution (pseudo-inverse).
pub fn lstsq_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 || a.nrows() == 0 {
        return DVector::zeros(a.ncols());
    }
    Svd::new(a).solve(b)
}

/// Residual projector `I - H (HᵀH)⁻¹ Hᵀ`, built from a thin QR of `H`.
pub fn residual_projector(h: &DMatrix<f64>) -> DMatrix<f64> {
    let m = h.nrows();
    if h.ncols() == 0 {
        return DMatrix::identity(m, m);
    }
    let q = h.clone().qr().q();
    DMatrix::identity(m, m) - &q * q.transpose()
}

pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, what: &'static str) -> Result<DVector<f64>> {
    a.clone()
        .cholesky()
        .map(|c| c.solve(b))
        .ok_or(GridError::NotPositiveDefinite(what))
}

pub fn solve_lu(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.clone()
        .lu()
        .solve(b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| GridError::Singular(what.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.0]);
        let n = null_space(&a);
        assert_eq!(n.ncols(), 2);
        assert!((&a * &n).norm() < 1e-12);
    }

    #[test]
    fn projector_annihilates_range() {
        let h = DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0]);
        let p = residual_projector(&h);
        assert!((&p * &h).norm() < 1e-14);
        assert!((&p * &p - &p).norm() < 1e-14);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            lstsq_full_rank(&a, &b),
            Err(GridError::RankDeficient { rank: 1, needed: 2 })
        ));
        let x = lstsq_min_norm(&a, &b);
        assert!((&a * x - b).norm() < 1e-12);
    }

    #[test]
    fn svd_reconstructs() {
        // Column order that trips nalgebra's bidiagonal SVD.
        let mut a = DMatrix::zeros(6, 2);
        a.set_column(0, &DVector::from_vec(vec![-0.35, 0.50, 0.77, 0.16, 1e-14, -5e-15]));
        a.set_column(1, &DVector::from_vec(vec![0.02, 0.08, 0.19, -1.10, 0.41, -0.75]));
        let wide = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.5, 0.0, 3.0, 1.0]);
        for m in [a, wide] {
            let svd = Svd::new(&m);
            let k = m.nrows().min(m.ncols());
            let rec = svd.u.columns(0, k) * DMatrix::from_diagonal(&svd.s.rows(0, k)) * svd.v.columns(0, k).transpose();
            assert!((rec - &m).amax() < 1e-14);
            assert!((svd.v.transpose() * &svd.v - DMatrix::identity(m.ncols(), m.ncols())).amax() < 1e-14);
        }
    }
}
