//! Bus admittance matrix assembly from π-model branches with optional
//! off-nominal transformers at the `from` side.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::case::GridCase;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Two-port admittances of one branch: `[I_f; I_t] = [[yff, yft], [ytf, ytt]] [V_f; V_t]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchAdmittance {
    pub from: usize,
    pub to: usize,
    pub y_series: Complex64,
    pub yff: Complex64,
    pub yft: Complex64,
    pub ytf: Complex64,
    pub ytt: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceModel {
    y: DMatrix<Complex64>,
    branches: Vec<BranchAdmittance>,
    shunts: Vec<Complex64>,
}

pub fn build_admittance(case: &GridCase) -> AdmittanceModel {
    let n = case.n_bus();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    let mut branches = Vec::with_capacity(case.n_branch());
    for (l, br) in case.branches().iter().enumerate() {
        let (f, t) = case.ends(l);
        let ys = br.series_admittance();
        let rho = br.ratio();
        let half_charging = J * (br.b_c / 2.0);
        let yff = (ys + half_charging) / rho.norm_sqr();
        let yft = -ys / rho.conj();
        let ytf = -ys / rho;
        let ytt = ys + half_charging;
        y[(f, f)] += yff;
        y[(f, t)] += yft;
        y[(t, f)] += ytf;
        y[(t, t)] += ytt;
        branches.push(BranchAdmittance {
            from: f,
            to: t,
            y_series: ys,
            yff,
            yft,
            ytf,
            ytt,
        });
    }
    let shunts: Vec<Complex64> = case.buses().iter().map(|b| J * b.b_shunt).collect();
    for (i, s) in shunts.iter().enumerate() {
        y[(i, i)] += s;
    }
    AdmittanceModel { y, branches, shunts }
}

impl AdmittanceModel {
    pub fn n_bus(&self) -> usize {
        self.y.nrows()
    }

    pub fn y(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    pub fn g(&self) -> DMatrix<f64> {
        self.y.map(|c| c.re)
    }

    pub fn b(&self) -> DMatrix<f64> {
        self.y.map(|c| c.im)
    }

    pub fn branches(&self) -> &[BranchAdmittance] {
        &self.branches
    }

    /// Shunt admittance `j b_s` of each bus.
    pub fn shunts(&self) -> &[Complex64] {
        &self.shunts
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.n_bus();
        (0..n).all(|i| (0..i).all(|j| (self.y[(i, j)] - self.y[(j, i)]).norm() <= tol))
    }
}
