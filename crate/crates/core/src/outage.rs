//! Line-outage identification from pre/post-event phase angles.
//!
//! With `θ̃ = θ' − θ`, the pre-event Laplacian satisfies
//! `B_x θ̃ = Aᵀm + η`, where `m_ℓ = a_ℓᵀθ'/x_ℓ` is nonzero only on outaged
//! lines. Solving with the reference angle pinned and keeping the rows of
//! the internal buses gives the regression `θ̃_int = C m + noise`, whose
//! column `ℓ` is the internal part of `B_x⁻¹ a_ℓ`. Injection noise `η`
//! reaches the observation through the same rows of `B_x⁻¹`, so both sides
//! are whitened by the induced covariance before any fitting.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{GridError, Result};
use crate::linalg::lstsq_min_norm;
use crate::netmodel::{build_dc, components, DcModel, GridCase};
use crate::powerflow::solve_dc;

#[derive(Debug, Clone, PartialEq)]
pub struct OutageModel {
    /// Bus positions whose angles are observed (reference excluded).
    pub internal: Vec<usize>,
    /// Whitened `|internal| × N_l` regression matrix.
    pub columns: DMatrix<f64>,
    /// Whitened observation.
    pub observation: DVector<f64>,
    /// Angle differences `θ̃` of the internal buses.
    pub theta_diff: DVector<f64>,
    whitener: DMatrix<f64>,
    n_bus: usize,
    ends: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutageEstimate {
    pub lines: Vec<usize>,
    /// Coefficients over all lines, zero off the identified set.
    pub m: Vec<f64>,
    pub residual: f64,
    /// Other supports fitting equally well (exhaustive search only); a
    /// nonempty list means the outage is not identifiable from the data.
    pub alternatives: Vec<Vec<usize>>,
}

/// `internal` lists bus positions; it must contain the reference bus.
pub fn build_outage_model(
    dc: &DcModel,
    theta_pre: &[f64],
    theta_post: &[f64],
    internal: &[usize],
) -> Result<OutageModel> {
    let n = dc.n_bus();
    for (what, v) in [("pre-event angles", theta_pre), ("post-event angles", theta_post)] {
        if v.len() != n {
            return Err(GridError::DimensionMismatch {
                what,
                expected: n,
                got: v.len(),
            });
        }
    }
    let reference = dc.slack();
    if !internal.contains(&reference) {
        return Err(GridError::InvalidInput("reference bus must be internal".into()));
    }
    if let Some(&b) = internal.iter().find(|&&b| b >= n) {
        return Err(GridError::InvalidInput(format!(
            "internal bus position {b} out of range"
        )));
    }
    if dc.n_components() > 1 {
        return Err(GridError::Disconnected);
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let bx = dc.laplacian();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |i, j| bx[(keep[i], keep[j])]);
    let chol = reduced
        .cholesky()
        .ok_or_else(|| GridError::Singular("reduced Laplacian".into()))?;
    let a_red = dc.incidence().transpose().select_rows(&keep);
    let propagated = chol.solve(&a_red);
    let mut rows: Vec<usize> = internal.iter().copied().filter(|&b| b != reference).collect();
    rows.sort_unstable();
    rows.dedup();
    let pick: Vec<usize> = rows.iter().map(|&b| if b < reference { b } else { b - 1 }).collect();
    let raw = propagated.select_rows(&pick);
    let theta_diff = DVector::from_iterator(
        rows.len(),
        rows.iter()
            .map(|&b| (theta_post[b] - theta_post[reference]) - (theta_pre[b] - theta_pre[reference])),
    );
    // Balanced injection noise (Σ η = 0) has covariance I − 11ᵀ/N on the
    // non-reference buses; it reaches θ̃ through the rows of B_x⁻¹.
    let inv_rows = chol.inverse().select_rows(&pick);
    let balanced = DMatrix::identity(n - 1, n - 1) - DMatrix::from_element(n - 1, n - 1, 1.0 / n as f64);
    let cov = &inv_rows * balanced * inv_rows.transpose();
    let l = cov
        .cholesky()
        .ok_or_else(|| GridError::Singular("outage noise covariance".into()))?
        .l();
    let whitener = l
        .solve_lower_triangular(&DMatrix::identity(rows.len(), rows.len()))
        .ok_or_else(|| GridError::Singular("outage noise covariance".into()))?;
    Ok(OutageModel {
        internal: rows,
        columns: &whitener * raw,
        observation: &whitener * &theta_diff,
        theta_diff,
        whitener,
        n_bus: n,
        ends: (0..dc.n_branch()).map(|l| dc.ends(l)).collect(),
    })
}

impl OutageModel {
    /// Replaces the observed angle differences (e.g. with noisy ones).
    pub fn set_theta_diff(&mut self, theta_diff: DVector<f64>) -> Result<()> {
        if theta_diff.len() != self.theta_diff.len() {
            return Err(GridError::DimensionMismatch {
                what: "angle differences",
                expected: self.theta_diff.len(),
                got: theta_diff.len(),
            });
        }
        self.observation = &self.whitener * &theta_diff;
        self.theta_diff = theta_diff;
        Ok(())
    }

    /// Adds balanced Gaussian injection noise, carried through the pre-event
    /// DC model, to the observed angle differences at `snr_db` decibels
    /// relative to the clean signal.
    pub fn add_injection_noise<R: Rng>(&mut self, dc: &DcModel, snr_db: f64, rng: &mut R) -> Result<()> {
        let n = dc.n_bus();
        if n != self.n_bus {
            return Err(GridError::DimensionMismatch {
                what: "buses",
                expected: self.n_bus,
                got: n,
            });
        }
        let mut eta: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let mean = eta.iter().sum::<f64>() / n as f64;
        eta.iter_mut().for_each(|e| *e -= mean);
        let spread = solve_dc(dc, &eta, dc.slack())?;
        let noise = DVector::from_iterator(self.internal.len(), self.internal.iter().map(|&b| spread[b]));
        let signal = self.theta_diff.clone();
        if noise.norm() == 0.0 || signal.norm() == 0.0 {
            return Ok(());
        }
        let scaled = &noise * (signal.norm() / noise.norm() * 10f64.powf(-snr_db / 20.0));
        self.set_theta_diff(signal + scaled)
    }

    /// Whether taking `lines` out leaves the pre-event grid connected; only
    /// such supports are candidates.
    pub fn keeps_connected(&self, lines: &[usize]) -> bool {
        let edges = (0..self.ends.len())
            .filter(|l| !lines.contains(l))
            .map(|l| self.ends[l]);
        let labels = components(self.n_bus, edges);
        labels.iter().all(|&c| c == labels[0])
    }

    pub fn n_lines(&self) -> usize {
        self.columns.ncols()
    }

    /// Least-squares fit on a support: coefficients and residual norm.
    pub fn fit(&self, support: &[usize]) -> (DVector<f64>, f64) {
        let mut m = DVector::zeros(self.n_lines());
        if support.is_empty() {
            return (m, self.observation.norm());
        }
        let c = self.columns.select_columns(support);
        let coef = lstsq_min_norm(&c, &self.observation);
        let residual = (&self.observation - &c * &coef).norm();
        for (k, &l) in support.iter().enumerate() {
            m[l] = coef[k];
        }
        (m, residual)
    }

    fn estimate(&self, mut support: Vec<usize>) -> OutageEstimate {
        support.sort_unstable();
        let (m, residual) = self.fit(&support);
        OutageEstimate {
            lines: support,
            m: m.iter().copied().collect(),
            residual,
            alternatives: Vec::new(),
        }
    }
}

/// Minimum-residual support of size `k ∈ {1, 2}` by enumeration; ties go to
/// the lexicographically first support.
pub fn identify_exhaustive(model: &OutageModel, k: usize) -> Result<OutageEstimate> {
    let nl = model.n_lines();
    let supports: Vec<Vec<usize>> = match k {
        1 => (0..nl).map(|l| vec![l]).collect(),
        2 => (0..nl).flat_map(|a| (a + 1..nl).map(move |b| vec![a, b])).collect(),
        _ => {
            return Err(GridError::TooLarge(format!(
                "exhaustive search supports k = 1 or 2, got {k}"
            )))
        }
    };
    let tol = 1e-9 * (1.0 + model.observation.norm());
    let fits: Vec<(Vec<usize>, f64)> = supports
        .into_iter()
        .filter(|s| model.keeps_connected(s))
        .map(|s| {
            let (_, r) = model.fit(&s);
            (s, r)
        })
        .collect();
    let best = fits.iter().map(|f| f.1).fold(f64::INFINITY, f64::min);
    let mut optimal = fits.into_iter().filter(|f| f.1 <= best + tol).map(|f| f.0);
    let support = optimal
        .next()
        .ok_or_else(|| GridError::InvalidInput("model has no lines".into()))?;
    let mut est = model.estimate(support);
    est.alternatives = optimal.collect();
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmpStop {
    Sparsity(usize),
    Residual(f64),
}

/// Orthogonal matching pursuit over unit-normalized columns with a
/// least-squares refit after every selection. Lines whose coefficient
/// vanishes in the final refit are pruned, so a greedy pick later explained
/// by other columns does not stay in the support.
pub fn identify_omp(model: &OutageModel, stop: OmpStop) -> OutageEstimate {
    let nl = model.n_lines();
    let norms: Vec<f64> = (0..nl).map(|l| model.columns.column(l).norm()).collect();
    let max_atoms = match stop {
        OmpStop::Sparsity(k) => k.min(nl),
        OmpStop::Residual(_) => nl.min(model.observation.len()),
    };
    let mut support: Vec<usize> = Vec::new();
    let mut residual = model.observation.clone();
    while support.len() < max_atoms {
        if let OmpStop::Residual(thr) = stop {
            if residual.norm() <= thr {
                break;
            }
        }
        // A known outage count must leave the grid connected; with an open
        // count only bridges are ruled out.
        let admissible = |l: usize| match stop {
            OmpStop::Sparsity(_) => {
                let mut trial = support.clone();
                trial.push(l);
                model.keeps_connected(&trial)
            }
            OmpStop::Residual(_) => model.keeps_connected(&[l]),
        };
        let mut best: Option<(usize, f64)> = None;
        for l in (0..nl).filter(|&l| !support.contains(&l) && norms[l] > 0.0 && admissible(l)) {
            let score = model.columns.column(l).dot(&residual).abs() / norms[l];
            if best.is_none_or(|(_, b)| score > b * (1.0 + 1e-12)) {
                best = Some((l, score));
            }
        }
        let Some((l, _)) = best else { break };
        support.push(l);
        let (m, _) = model.fit(&support);
        residual = &model.observation - &model.columns * m;
    }
    let (m, _) = model.fit(&support);
    let largest = support.iter().map(|&l| m[l].abs()).fold(0.0, f64::max);
    support.retain(|&l| m[l].abs() > 1e-8 * largest);
    model.estimate(support)
}

/// Pre- and post-event DC angles for the given injections when `outaged`
/// branch positions trip. Fails if the outage islands the grid.
pub fn simulate_outage(case: &GridCase, p: &[f64], outaged: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let pre = build_dc(case);
    let theta_pre = solve_dc(&pre, p, case.slack())?;
    let post_case = case.without_branches(outaged)?;
    let post = build_dc(&post_case);
    let theta_post = solve_dc(&post, p, post_case.slack())?;
    Ok((theta_pre, theta_post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{ieee14, ieee14_dc_injections, ring};

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn no_event() {
        let case = ring(4, 0.1);
        let dc = build_dc(&case);
        let theta = vec![0.0, -0.1, -0.2, -0.1];
        let model = build_outage_model(&dc, &theta, &theta, &all(4)).unwrap();
        assert_eq!(model.theta_diff.amax(), 0.0);
        let est = identify_exhaustive(&model, 1).unwrap();
        assert_eq!(est.lines, vec![0]);
        assert!(est.m.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(identify_omp(&model, OmpStop::Sparsity(0)).lines, Vec::<usize>::new());
    }

    #[test]
    fn ring_single_outage_forward_model() {
        let case = ring(4, 0.1);
        let p = [0.0, 0.5, -0.8, 0.3];
        let (pre, post) = simulate_outage(&case, &p, &[1]).unwrap();
        let dc = build_dc(&case);
        let model = build_outage_model(&dc, &pre, &post, &all(4)).unwrap();
        let (f, t) = dc.ends(1);
        let m1 = (post[f] - post[t]) / 0.1;
        let predicted = model.columns.column(1) * m1;
        assert!((predicted - &model.observation).amax() < 1e-12);
        let est = identify_exhaustive(&model, 1).unwrap();
        assert_eq!(est.lines, vec![1]);
        assert!(est.residual < 1e-12);
    }

    #[test]
    fn external_reference_rejected() {
        let dc = build_dc(&ring(4, 0.1));
        let z = vec![0.0; 4];
        assert!(build_outage_model(&dc, &z, &z, &[1, 2]).is_err());
    }

    #[test]
    fn double_outage_14_bus() {
        let case = ieee14();
        let p = ieee14_dc_injections();
        let (pre, post) = simulate_outage(&case, &p, &[2, 9]).unwrap();
        let model = build_outage_model(&build_dc(&case), &pre, &post, &all(14)).unwrap();
        let est = identify_exhaustive(&model, 2).unwrap();
        assert_eq!(est.lines, vec![2, 9]);
        assert!(identify_exhaustive(&model, 3).is_err());
    }
}
