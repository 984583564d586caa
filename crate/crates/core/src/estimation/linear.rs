//! Linear (DC) estimation on a whitened model `z = Hθ + ε`, `ε ~ N(0, I)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::wls::EstimationResult;
use crate::error::{GridError, Result};
use crate::linalg::{lstsq_full_rank, numerical_rank, residual_projector, solve_spd};

fn check_rows(h: &DMatrix<f64>, z: &DVector<f64>) -> Result<()> {
    if h.nrows() != z.len() {
        return Err(GridError::DimensionMismatch {
            what: "measurement vector",
            expected: h.nrows(),
            got: z.len(),
        });
    }
    Ok(())
}

fn linear_result(h: &DMatrix<f64>, z: &DVector<f64>, x: DVector<f64>, removed: Vec<usize>) -> EstimationResult {
    let r = z - h * &x;
    EstimationResult {
        x: x.iter().copied().collect(),
        voltages: None,
        objective: r.norm_squared(),
        residuals: r.iter().copied().collect(),
        iterations: 1,
        converged: true,
        removed,
    }
}

/// Ordinary least squares; `H` must have full column rank.
pub fn dc_linear_se(h: &DMatrix<f64>, z: &DVector<f64>) -> Result<EstimationResult> {
    check_rows(h, z)?;
    let x = lstsq_full_rank(h, z)?;
    Ok(linear_result(h, z, x, Vec::new()))
}

/// Indices whose column of the residual projector vanishes: dropping any of
/// them leaves `H` rank deficient.
pub fn critical_measurements(h: &DMatrix<f64>) -> Vec<usize> {
    let p = residual_projector(h);
    (0..h.nrows()).filter(|&i| p.column(i).amax() < 1e-9).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BadDataOptions {
    pub alpha: f64,
    pub lnrt_threshold: f64,
}

impl Default for BadDataOptions {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            lnrt_threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BadDataReport {
    pub chi2_detected: bool,
    pub chi2_statistic: f64,
    pub chi2_threshold: f64,
    pub removed: Vec<usize>,
    /// Set when the next removal would have made the state unobservable.
    pub halted: bool,
    pub result: EstimationResult,
}

/// χ² detection followed by repeated largest-normalized-residual removal.
pub fn bad_data_scan(h: &DMatrix<f64>, z: &DVector<f64>, opts: BadDataOptions) -> Result<BadDataReport> {
    check_rows(h, z)?;
    let n = h.ncols();
    let rank = numerical_rank(h);
    if rank < n {
        return Err(GridError::RankDeficient { rank, needed: n });
    }
    let mut active: Vec<usize> = (0..h.nrows()).collect();
    let mut removed = Vec::new();
    let mut halted = false;
    let mut first = None;
    loop {
        let ha = h.select_rows(&active);
        let za = z.select_rows(&active);
        let x = lstsq_full_rank(&ha, &za)?;
        let r = &za - &ha * &x;
        let stat = r.norm_squared();
        let dof = active.len() - n;
        let threshold = if dof > 0 {
            ChiSquared::new(dof as f64)
                .map_err(|e| GridError::InvalidInput(e.to_string()))?
                .inverse_cdf(1.0 - opts.alpha)
        } else {
            f64::INFINITY
        };
        let detected = stat > threshold;
        first.get_or_insert((detected, stat, threshold));
        let done = |x| linear_result(&ha, &za, x, removed.clone());
        if !detected {
            return Ok(report(first.unwrap(), removed.clone(), halted, done(x)));
        }
        let p = residual_projector(&ha);
        let mut best: Option<(usize, f64)> = None;
        for k in 0..active.len() {
            let pkk = p[(k, k)];
            if pkk < 1e-9 {
                continue;
            }
            let ratio = r[k].abs() / pkk.sqrt();
            if best.is_none_or(|(_, b)| ratio > b * (1.0 + 1e-12)) {
                best = Some((k, ratio));
            }
        }
        let Some((k, _)) = best.filter(|&(_, ratio)| ratio > opts.lnrt_threshold) else {
            return Ok(report(first.unwrap(), removed.clone(), halted, done(x)));
        };
        let mut rest = active.clone();
        rest.remove(k);
        if numerical_rank(&h.select_rows(&rest)) < n {
            halted = true;
            return Ok(report(first.unwrap(), removed.clone(), halted, done(x)));
        }
        removed.push(active[k]);
        active = rest;
    }
}

fn report(first: (bool, f64, f64), removed: Vec<usize>, halted: bool, result: EstimationResult) -> BadDataReport {
    BadDataReport {
        chi2_detected: first.0,
        chi2_statistic: first.1,
        chi2_threshold: first.2,
        removed,
        halted,
        result,
    }
}

/// MAP estimate under a Gaussian prior `θ ~ N(μ, Σ)`.
pub fn fuse_prior(
    h: &DMatrix<f64>,
    z: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
) -> Result<EstimationResult> {
    check_rows(h, z)?;
    let n = prior_mean.len();
    if h.ncols() != n || prior_cov.shape() != (n, n) {
        return Err(GridError::DimensionMismatch {
            what: "prior",
            expected: h.ncols(),
            got: n,
        });
    }
    if (prior_cov - prior_cov.transpose()).amax() > 1e-12 * (1.0 + prior_cov.amax()) {
        return Err(GridError::NotPositiveDefinite("prior covariance"));
    }
    let chol = prior_cov
        .clone()
        .cholesky()
        .ok_or(GridError::NotPositiveDefinite("prior covariance"))?;
    let info = chol.inverse();
    let lhs = h.transpose() * h + &info;
    let rhs = h.transpose() * z + &info * prior_mean;
    let x = solve_spd(&lhs, &rhs, "posterior information")?;
    Ok(linear_result(h, z, x, Vec::new()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackVector {
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    /// Number of readings the attacker must alter.
    pub support: usize,
}

/// Stealthy injection `a = Hc`, which shifts the estimate by `c` without
/// changing the residual.
pub fn build_attack(h: &DMatrix<f64>, c: &DVector<f64>) -> Result<AttackVector> {
    if c.len() != h.ncols() {
        return Err(GridError::DimensionMismatch {
            what: "attack coefficients",
            expected: h.ncols(),
            got: c.len(),
        });
    }
    if c.iter().all(|v| *v == 0.0) {
        return Err(GridError::InvalidInput("attack coefficients are all zero".into()));
    }
    let a = h * c;
    let scale = a.amax();
    Ok(AttackVector {
        c: c.iter().copied().collect(),
        support: a.iter().filter(|v| v.abs() > 1e-12 * scale).count(),
        a: a.iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repeated() -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::from_element(3, 1, 1.0), DVector::from_vec(vec![1.0, 1.0, 7.0]))
    }

    #[test]
    fn mean_of_repeats() {
        let (h, z) = repeated();
        let res = dc_linear_se(&h, &z).unwrap();
        assert!((res.x[0] - 3.0).abs() < 1e-12);
        for (r, e) in res.residuals.iter().zip([-2.0, -2.0, 4.0]) {
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn lnrt_removes_outlier() {
        let (h, z) = repeated();
        let rep = bad_data_scan(&h, &z, BadDataOptions::default()).unwrap();
        assert!(rep.chi2_detected);
        assert_eq!(rep.removed, vec![2]);
        assert!((rep.result.x[0] - 1.0).abs() < 1e-12);
        assert!(!rep.halted);
    }

    #[test]
    fn consistent_data_passes() {
        let h = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let z = &h * DVector::from_vec(vec![0.3, -0.2]);
        let rep = bad_data_scan(&h, &z, BadDataOptions::default()).unwrap();
        assert!(!rep.chi2_detected && rep.removed.is_empty());
    }

    #[test]
    fn square_system_all_critical() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 1.0]);
        assert_eq!(critical_measurements(&h), vec![0, 1]);
        let dup = DMatrix::from_row_slice(3, 2, &[2.0, 1.0, 2.0, 1.0, 0.0, 1.0]);
        assert_eq!(critical_measurements(&dup), vec![2]);
    }

    #[test]
    fn prior_fusion_limits() {
        let h = DMatrix::from_element(1, 1, 1.0);
        let z = DVector::from_element(1, 2.0);
        let mu = DVector::zeros(1);
        let res = fuse_prior(&h, &z, &mu, &DMatrix::identity(1, 1)).unwrap();
        assert!((res.x[0] - 1.0).abs() < 1e-12);
        let empty = fuse_prior(
            &DMatrix::zeros(0, 1),
            &DVector::zeros(0),
            &DVector::from_element(1, 0.7),
            &DMatrix::identity(1, 1),
        )
        .unwrap();
        assert!((empty.x[0] - 0.7).abs() < 1e-15);
        assert!(fuse_prior(&h, &z, &mu, &DMatrix::from_element(1, 1, -1.0)).is_err());
    }

    #[test]
    fn zero_attack_rejected() {
        let h = DMatrix::identity(2, 2);
        assert!(build_attack(&h, &DVector::zeros(2)).is_err());
    }
}
