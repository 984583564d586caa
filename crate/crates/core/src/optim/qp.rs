//! Convex quadratic programming by a primal–dual interior-point method with
//! Mehrotra predictor–corrector steps.
//!
//! ```text
//! minimize    ½ xᵀQx + cᵀx
//! subject to  A_eq x  = b_eq
//!             A_in x ≤ b_in
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
}

impl QpProblem {
    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        let dims = [
            ("Q rows", self.q.nrows()),
            ("Q cols", self.q.ncols()),
            ("A_eq cols", self.a_eq.ncols()),
            ("A_in cols", self.a_in.ncols()),
        ];
        for (what, got) in dims {
            if got != n {
                return Err(GridError::DimensionMismatch { what, expected: n, got });
            }
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(GridError::DimensionMismatch {
                what: "b_eq",
                expected: self.a_eq.nrows(),
                got: self.b_eq.len(),
            });
        }
        if self.a_in.nrows() != self.b_in.len() {
            return Err(GridError::DimensionMismatch {
                what: "b_in",
                expected: self.a_in.nrows(),
                got: self.b_in.len(),
            });
        }
        let scale = 1.0 + self.q.amax();
        if (&self.q - self.q.transpose()).amax() > 1e-12 * scale {
            return Err(GridError::InvalidInput("Q is not symmetric".into()));
        }
        let shifted = &self.q + DMatrix::identity(n, n) * (1e-9 * scale);
        if shifted.cholesky().is_none() {
            return Err(GridError::NotPositiveDefinite("QP Hessian"));
        }
        Ok(())
    }
}

/// Incremental construction of a [`QpProblem`] from sparse rows.
#[derive(Debug, Clone)]
pub struct QpBuilder {
    n: usize,
    q: DMatrix<f64>,
    c: DVector<f64>,
    eq: Vec<(Vec<(usize, f64)>, f64)>,
    le: Vec<(Vec<(usize, f64)>, f64)>,
}

impl QpBuilder {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            eq: Vec::new(),
            le: Vec::new(),
        }
    }

    /// Adds `v·x_i·x_j` to the objective (so `quad(i, i, a)` adds `a x_i²`).
    pub fn quad(&mut self, i: usize, j: usize, v: f64) -> &mut Self {
        if i == j {
            self.q[(i, i)] += 2.0 * v;
        } else {
            self.q[(i, j)] += v;
            self.q[(j, i)] += v;
        }
        self
    }

    pub fn lin(&mut self, i: usize, v: f64) -> &mut Self {
        self.c[i] += v;
        self
    }

    /// Adds an equality row; returns its index (for dual lookup).
    pub fn eq(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push((row, rhs));
        self.eq.len() - 1
    }

    /// Adds a `≤` row; returns its index.
    pub fn le(&mut self, row: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.le.push((row, rhs));
        self.le.len() - 1
    }

    /// Adds finite variable bounds as inequality rows; returns `(lower, upper)` row indices.
    pub fn bounds(&mut self, i: usize, lo: f64, hi: f64) -> (Option<usize>, Option<usize>) {
        let l = lo.is_finite().then(|| self.le(vec![(i, -1.0)], -lo));
        let u = hi.is_finite().then(|| self.le(vec![(i, 1.0)], hi));
        (l, u)
    }

    pub fn build(&self) -> QpProblem {
        let dense = |rows: &[(Vec<(usize, f64)>, f64)]| {
            let mut a = DMatrix::zeros(rows.len(), self.n);
            let mut b = DVector::zeros(rows.len());
            for (r, (row, rhs)) in rows.iter().enumerate() {
                for &(j, v) in row {
                    a[(r, j)] += v;
                }
                b[r] = *rhs;
            }
            (a, b)
        };
        let (a_eq, b_eq) = dense(&self.eq);
        let (a_in, b_in) = dense(&self.le);
        QpProblem {
            q: self.q.clone(),
            c: self.c.clone(),
            a_eq,
            b_eq,
            a_in,
            b_in,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Prices of the equality rows: `∂ objective / ∂ b_eq`.
    pub eq_duals: DVector<f64>,
    /// Nonnegative multipliers of the `≤` rows.
    pub ineq_duals: DVector<f64>,
    pub objective: f64,
    pub stationarity: f64,
    pub eq_residual: f64,
    pub ineq_residual: f64,
    pub complementarity: f64,
    pub iterations: usize,
    pub status: QpStatus,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(x, d)| -x / d)
        .fold(1.0, f64::min)
}

pub fn solve_qp(p: &QpProblem, opts: QpOptions) -> Result<QpSolution> {
    p.validate()?;
    // The iteration works on an objective normalized to unit size; duals
    // are mapped back afterwards.
    let sigma = p.c.amax().max(p.q.amax()).max(1e-12);
    let scaled = QpProblem {
        q: &p.q / sigma,
        c: &p.c / sigma,
        a_eq: p.a_eq.clone(),
        b_eq: p.b_eq.clone(),
        a_in: p.a_in.clone(),
        b_in: p.b_in.clone(),
    };
    let mut sol = interior_point(&scaled, opts)?;
    sol.eq_duals *= sigma;
    sol.ineq_duals *= sigma;
    sol.objective = p.objective(&sol.x);
    sol.stationarity *= sigma;
    sol.complementarity *= sigma;
    Ok(sol)
}

fn interior_point(p: &QpProblem, opts: QpOptions) -> Result<QpSolution> {
    let n = p.n_vars();
    let me = p.b_eq.len();
    let mi = p.b_in.len();
    let (ae, ai) = (&p.a_eq, &p.a_in);
    let ait = ai.transpose();
    let aet = ae.transpose();

    let scale_d = 1.0 + p.c.amax().max(p.q.amax());
    let scale_e = 1.0 + p.b_eq.amax();
    let scale_i = 1.0 + p.b_in.amax();

    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(me);
    let mut z = DVector::from_element(mi, 1.0);
    let mut s = DVector::from_iterator(mi, (0..mi).map(|i| (p.b_in[i]).max(1.0)));

    let mut reg = 0.0;
    let mut iterations = 0;
    let mut status = QpStatus::MaxIter;
    loop {
        let r_d = &p.q * &x + &p.c + &aet * &y + &ait * &z;
        let r_e = ae * &x - &p.b_eq;
        let r_i = ai * &x + &s - &p.b_in;
        let mu = if mi > 0 { s.dot(&z) / mi as f64 } else { 0.0 };
        let primal = (r_e.amax() / scale_e).max(r_i.amax() / scale_i);
        if r_d.amax() / scale_d <= opts.tol && primal <= opts.tol && mu <= opts.tol {
            status = QpStatus::Optimal;
            break;
        }
        // A certificate of infeasibility shows up as multipliers growing
        // without bound while the primal residual stalls.
        let dual_size = y.amax().max(z.amax());
        if dual_size > 1e10 * scale_d && primal > opts.tol.sqrt() {
            status = QpStatus::Infeasible;
            break;
        }
        if iterations >= opts.max_iter {
            if primal > 1e-6 {
                status = QpStatus::Infeasible;
            }
            break;
        }

        let sigma_w = DVector::from_iterator(mi, (0..mi).map(|k| z[k] / s[k]));
        let mut h = p.q.clone();
        if mi > 0 {
            h += &ait * DMatrix::from_diagonal(&sigma_w) * ai;
        }
        let build = |reg: f64| {
            let mut k = DMatrix::zeros(n + me, n + me);
            k.view_mut((0, 0), (n, n)).copy_from(&h);
            for i in 0..n {
                k[(i, i)] += reg;
            }
            k.view_mut((0, n), (n, me)).copy_from(&aet);
            k.view_mut((n, 0), (me, n)).copy_from(ae);
            for i in 0..me {
                k[(n + i, n + i)] -= reg;
            }
            k.lu()
        };
        let mut lu = build(reg);
        if !lu.is_invertible() {
            reg = if reg == 0.0 { 1e-12 * scale_d } else { reg * 100.0 };
            lu = build(reg);
        }
        let solve = |r_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let w = DVector::from_iterator(mi, (0..mi).map(|k| (r_c[k] + z[k] * r_i[k]) / s[k]));
            let mut rhs = DVector::zeros(n + me);
            rhs.rows_mut(0, n).copy_from(&(-&r_d - &ait * &w));
            rhs.rows_mut(n, me).copy_from(&(-&r_e));
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, n).into_owned();
            let dy = sol.rows(n, me).into_owned();
            let ds = -&r_i - ai * &dx;
            let dz = DVector::from_iterator(mi, (0..mi).map(|k| (r_c[k] - z[k] * ds[k]) / s[k]));
            Some((dx, dy, ds, dz))
        };

        let r_aff = -s.component_mul(&z);
        let Some((dx_a, dy_a, ds_a, dz_a)) = solve(&r_aff) else {
            return Err(GridError::Singular("interior-point KKT system".into()));
        };
        let (dx, dy, ds, dz) = if mi == 0 {
            (dx_a, dy_a, ds_a, dz_a)
        } else {
            let alpha_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
            let mu_aff = (&s + &ds_a * alpha_aff).dot(&(&z + &dz_a * alpha_aff)) / mi as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let r_c = DVector::from_iterator(mi, (0..mi).map(|k| -s[k] * z[k] - ds_a[k] * dz_a[k] + sigma * mu));
            match solve(&r_c) {
                Some(d) => d,
                None => return Err(GridError::Singular("interior-point KKT system".into())),
            }
        };
        let alpha = if mi == 0 {
            1.0
        } else {
            let eta = (1.0 - mu).clamp(0.9, 0.999);
            (eta * max_step(&s, &ds).min(max_step(&z, &dz))).min(1.0)
        };
        x += &dx * alpha;
        y += &dy * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        iterations += 1;
    }

    let r_d = &p.q * &x + &p.c + &aet * &y + &ait * &z;
    let r_e = ae * &x - &p.b_eq;
    let slack = &p.b_in - ai * &x;
    let complementarity = (0..mi).map(|k| (z[k] * slack[k]).abs()).fold(0.0, f64::max);
    Ok(QpSolution {
        objective: p.objective(&x),
        stationarity: r_d.amax(),
        eq_residual: r_e.amax(),
        ineq_residual: slack.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max),
        complementarity,
        eq_duals: -y,
        ineq_duals: z,
        x,
        iterations,
        status,
    })
}
