//! Linear (DC) network model: incidence `A`, reactance weights `D` and the
//! weighted Laplacian `B_x = AᵀDA`.

use nalgebra::{DMatrix, DVector};

use super::case::GridCase;

#[derive(Debug, Clone, PartialEq)]
pub struct DcModel {
    a: DMatrix<f64>,
    d: DVector<f64>,
    bx: DMatrix<f64>,
    b_mm: DVector<f64>,
    ends: Vec<(usize, usize)>,
    slack: usize,
}

pub fn build_dc(case: &GridCase) -> DcModel {
    let (nb, nl) = (case.n_bus(), case.n_branch());
    let mut a = DMatrix::zeros(nl, nb);
    let mut d = DVector::zeros(nl);
    let mut bx = DMatrix::zeros(nb, nb);
    let mut b_mm = DVector::from_iterator(nb, case.buses().iter().map(|b| b.b_shunt));
    let mut ends = Vec::with_capacity(nl);
    for (l, br) in case.branches().iter().enumerate() {
        let (f, t) = case.ends(l);
        a[(l, f)] = 1.0;
        a[(l, t)] = -1.0;
        let w = 1.0 / br.x;
        d[l] = w;
        bx[(f, f)] += w;
        bx[(t, t)] += w;
        bx[(f, t)] -= w;
        bx[(t, f)] -= w;
        b_mm[f] += br.b_c / 2.0;
        b_mm[t] += br.b_c / 2.0;
        ends.push((f, t));
    }
    let model = DcModel {
        a,
        d,
        bx,
        b_mm,
        ends,
        slack: case.slack(),
    };
    debug_assert!((model.factored_laplacian() - &model.bx).amax() <= 1e-9 * (1.0 + model.bx.amax()));
    model
}

impl DcModel {
    pub fn n_bus(&self) -> usize {
        self.bx.nrows()
    }

    pub fn n_branch(&self) -> usize {
        self.a.nrows()
    }

    /// Branch-bus incidence matrix, one `+1/−1` row per branch.
    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// Diagonal of `D`, i.e. `1/x_l`.
    pub fn weights(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.bx
    }

    /// `AᵀDA`, recomputed from the factors.
    pub fn factored_laplacian(&self) -> DMatrix<f64> {
        let da = DMatrix::from_diagonal(&self.d) * &self.a;
        self.a.transpose() * da
    }

    /// Total shunt term `b_mm = b_s,mm + Σ b_c,mn / 2` per bus.
    pub fn shunt_terms(&self) -> &DVector<f64> {
        &self.b_mm
    }

    /// Series susceptance `b_mn = −1/x_mn` of branch `l`.
    pub fn branch_susceptance(&self, l: usize) -> f64 {
        -self.d[l]
    }

    pub fn ends(&self, l: usize) -> (usize, usize) {
        self.ends[l]
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn n_components(&self) -> usize {
        let lab = super::case::components(self.n_bus(), self.ends.iter().copied());
        lab.iter().max().map_or(0, |m| m + 1)
    }

    /// Flows `D A θ` on every branch.
    pub fn flows(&self, theta: &DVector<f64>) -> DVector<f64> {
        (&self.a * theta).component_mul(&self.d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::parse_case;

    #[test]
    fn two_bus_laplacian() {
        let c = parse_case(
            r#"{"version":1,"buses":[{"id":1,"type":"slack"},{"id":2,"type":"pq"}],
            "branches":[{"from":1,"to":2,"x":0.1}]}"#,
        )
        .unwrap();
        let dc = build_dc(&c);
        let expect = DMatrix::from_row_slice(2, 2, &[10.0, -10.0, -10.0, 10.0]);
        assert!((dc.laplacian() - expect).amax() < 1e-12);
        assert_eq!(dc.branch_susceptance(0), -10.0);
    }

    #[test]
    fn disconnected_rank() {
        let c = parse_case(
            r#"{"version":1,"buses":[{"id":1,"type":"slack"},{"id":2,"type":"pq"},
              {"id":3,"type":"pq"},{"id":4,"type":"pq"}],
            "branches":[{"from":1,"to":2,"x":0.1},{"from":3,"to":4,"x":0.2}]}"#,
        )
        .unwrap();
        let dc = build_dc(&c);
        assert_eq!(dc.n_components(), 2);
        assert_eq!(crate::linalg::numerical_rank(dc.laplacian()), 2);
    }
}
