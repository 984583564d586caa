//! Complex bus-voltage state and the nodal/branch power equations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::admittance::AdmittanceModel;
use super::dc::DcModel;
use crate::error::{GridError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coords {
    Polar,
    Rect,
}

/// Bus voltages in either polar or rectangular form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "coords", rename_all = "lowercase")]
pub enum ComplexState {
    Polar { vm: Vec<f64>, va: Vec<f64> },
    Rect { vr: Vec<f64>, vi: Vec<f64> },
}

impl ComplexState {
    pub fn flat(n: usize) -> Self {
        ComplexState::Polar {
            vm: vec![1.0; n],
            va: vec![0.0; n],
        }
    }

    pub fn polar(vm: Vec<f64>, va: Vec<f64>) -> Result<Self> {
        if vm.len() != va.len() {
            return Err(GridError::DimensionMismatch {
                what: "voltage angles",
                expected: vm.len(),
                got: va.len(),
            });
        }
        Ok(ComplexState::Polar { vm, va })
    }

    pub fn rect(vr: Vec<f64>, vi: Vec<f64>) -> Result<Self> {
        if vr.len() != vi.len() {
            return Err(GridError::DimensionMismatch {
                what: "imaginary parts",
                expected: vr.len(),
                got: vi.len(),
            });
        }
        Ok(ComplexState::Rect { vr, vi })
    }

    pub fn from_phasors(v: &[Complex64]) -> Self {
        ComplexState::Rect {
            vr: v.iter().map(|c| c.re).collect(),
            vi: v.iter().map(|c| c.im).collect(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ComplexState::Polar { vm, .. } => vm.len(),
            ComplexState::Rect { vr, .. } => vr.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_polar(&self) -> Self {
        match self {
            ComplexState::Polar { .. } => self.clone(),
            ComplexState::Rect { vr, vi } => ComplexState::Polar {
                vm: vr.iter().zip(vi).map(|(r, i)| r.hypot(*i)).collect(),
                va: vr.iter().zip(vi).map(|(r, i)| i.atan2(*r)).collect(),
            },
        }
    }

    pub fn to_rect(&self) -> Self {
        match self {
            ComplexState::Rect { .. } => self.clone(),
            ComplexState::Polar { vm, va } => ComplexState::Rect {
                vr: vm.iter().zip(va).map(|(m, a)| m * a.cos()).collect(),
                vi: vm.iter().zip(va).map(|(m, a)| m * a.sin()).collect(),
            },
        }
    }

    pub fn phasors(&self) -> Vec<Complex64> {
        match self {
            ComplexState::Polar { vm, va } => vm.iter().zip(va).map(|(m, a)| Complex64::from_polar(*m, *a)).collect(),
            ComplexState::Rect { vr, vi } => vr.iter().zip(vi).map(|(r, i)| Complex64::new(*r, *i)).collect(),
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        match self.to_polar() {
            ComplexState::Polar { vm, .. } => vm,
            ComplexState::Rect { .. } => unreachable!(),
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        match self.to_polar() {
            ComplexState::Polar { va, .. } => va,
            ComplexState::Rect { .. } => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Injections {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GridError::DimensionMismatch { what, expected, got });
    }
    Ok(())
}

/// Active and reactive bus injections, evaluated with either the polar or the
/// rectangular form of the power-flow equations.
pub fn ac_injections(model: &AdmittanceModel, state: &ComplexState, coords: Coords) -> Result<Injections> {
    let n = model.n_bus();
    check_len("state", n, state.len())?;
    let (g, b) = (model.g(), model.b());
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    match coords {
        Coords::Polar => {
            let (vm, va) = match state.to_polar() {
                ComplexState::Polar { vm, va } => (vm, va),
                _ => unreachable!(),
            };
            for m in 0..n {
                for k in 0..n {
                    let (gmk, bmk) = (g[(m, k)], b[(m, k)]);
                    if gmk == 0.0 && bmk == 0.0 {
                        continue;
                    }
                    let (s, c) = (va[m] - va[k]).sin_cos();
                    let vv = vm[m] * vm[k];
                    p[m] += vv * (gmk * c + bmk * s);
                    q[m] += vv * (gmk * s - bmk * c);
                }
            }
        }
        Coords::Rect => {
            let (vr, vi) = match state.to_rect() {
                ComplexState::Rect { vr, vi } => (vr, vi),
                _ => unreachable!(),
            };
            for m in 0..n {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for k in 0..n {
                    s1 += vr[k] * g[(m, k)] - vi[k] * b[(m, k)];
                    s2 += vi[k] * g[(m, k)] + vr[k] * b[(m, k)];
                }
                p[m] = vr[m] * s1 + vi[m] * s2;
                q[m] = vi[m] * s1 - vr[m] * s2;
            }
        }
    }
    Ok(Injections { p, q })
}

/// Complex injections `s = diag(v) (Y v)*`.
pub fn complex_injections(model: &AdmittanceModel, v: &[Complex64]) -> Vec<Complex64> {
    let vv = DVector::from_column_slice(v);
    let i = model.y() * &vv;
    v.iter().zip(i.iter()).map(|(vm, im)| vm * im.conj()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchFlow {
    pub i_from: Complex64,
    pub i_to: Complex64,
    pub s_from: Complex64,
    pub s_to: Complex64,
}

pub fn branch_flows(model: &AdmittanceModel, state: &ComplexState) -> Result<Vec<BranchFlow>> {
    check_len("state", model.n_bus(), state.len())?;
    let v = state.phasors();
    Ok(model
        .branches()
        .iter()
        .map(|br| {
            let (vf, vt) = (v[br.from], v[br.to]);
            let i_from = br.yff * vf + br.yft * vt;
            let i_to = br.ytf * vf + br.ytt * vt;
            BranchFlow {
                i_from,
                i_to,
                s_from: vf * i_from.conj(),
                s_to: vt * i_to.conj(),
            }
        })
        .collect())
}

/// Linearized injections: `P = B_x θ` and `Q = B_x v − b_mm`.
pub fn dc_injections(model: &DcModel, theta: &[f64], v: &[f64]) -> Result<Injections> {
    let n = model.n_bus();
    check_len("theta", n, theta.len())?;
    check_len("v", n, v.len())?;
    let bx = model.laplacian();
    let p = bx * DVector::from_column_slice(theta);
    let q = bx * DVector::from_column_slice(v) - model.shunt_terms();
    Ok(Injections {
        p: p.iter().copied().collect(),
        q: q.iter().copied().collect(),
    })
}

/// Sensitivities of the complex injections to bus angles and magnitudes,
/// `(∂s/∂θ, ∂s/∂|V|)`, both `N_b × N_b`.
pub fn injection_jacobian(model: &AdmittanceModel, v: &[Complex64]) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let y = model.y();
    let i = y * DVector::from_column_slice(v);
    let j = Complex64::new(0.0, 1.0);
    let mut d_va = DMatrix::zeros(n, n);
    let mut d_vm = DMatrix::zeros(n, n);
    for r in 0..n {
        for k in 0..n {
            let yrk = y[(r, k)];
            let da = j * v[k];
            let dm = v[k] / v[k].norm();
            let mut sa = v[r] * (yrk * da).conj();
            let mut sm = v[r] * (yrk * dm).conj();
            if r == k {
                sa += da * i[r].conj();
                sm += dm * i[r].conj();
            }
            d_va[(r, k)] = sa;
            d_vm[(r, k)] = sm;
        }
    }
    (d_va, d_vm)
}

/// Partial derivatives of a branch-end complex power with respect to the
/// angle and magnitude of both terminal buses.
#[derive(Debug, Clone, Copy)]
pub struct FlowSensitivity {
    pub d_va_from: Complex64,
    pub d_va_to: Complex64,
    pub d_vm_from: Complex64,
    pub d_vm_to: Complex64,
}

/// Sensitivity of `S` measured at the `from` end (`at_from`) or the `to` end.
pub fn flow_sensitivity(model: &AdmittanceModel, v: &[Complex64], branch: usize, at_from: bool) -> FlowSensitivity {
    let br = model.branches()[branch];
    let j = Complex64::new(0.0, 1.0);
    let (vf, vt) = (v[br.from], v[br.to]);
    // Near end `a` with self term `yaa`, far end `b` with mutual `yab`.
    let (va, vb, yaa, yab) = if at_from {
        (vf, vt, br.yff, br.yft)
    } else {
        (vt, vf, br.ytt, br.ytf)
    };
    let ia = yaa * va + yab * vb;
    let near = |d: Complex64| d * ia.conj() + va * (yaa * d).conj();
    let far = |d: Complex64| va * (yab * d).conj();
    let (na, nm) = (near(j * va), near(va / va.norm()));
    let (fa, fm) = (far(j * vb), far(vb / vb.norm()));
    if at_from {
        FlowSensitivity {
            d_va_from: na,
            d_vm_from: nm,
            d_va_to: fa,
            d_vm_to: fm,
        }
    } else {
        FlowSensitivity {
            d_va_from: fa,
            d_vm_from: fm,
            d_va_to: na,
            d_vm_to: nm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_admittance, build_dc, parse_case, GridCase};

    fn two_bus(extra: &str) -> GridCase {
        parse_case(&format!(
            r#"{{"version":1,"buses":[{{"id":1,"type":"slack"}},{{"id":2,"type":"pq"}}],
            "branches":[{{"from":1,"to":2,"x":0.1{extra}}}]}}"#
        ))
        .unwrap()
    }

    #[test]
    fn flat_state_only_shunt_reactive() {
        let m = build_admittance(&two_bus(",\"b_c\":0.2"));
        let inj = ac_injections(&m, &ComplexState::flat(2), Coords::Polar).unwrap();
        assert!(inj.p.iter().all(|p| p.abs() < 1e-14));
        // Q = −b_c/2 at each end under flat voltages.
        assert!(inj.q.iter().all(|q| (q + 0.1).abs() < 1e-12));
    }

    #[test]
    fn hand_two_bus_active_power() {
        let m = build_admittance(&two_bus(""));
        let s = ComplexState::polar(vec![1.0, 1.0], vec![0.1, 0.0]).unwrap();
        let inj = ac_injections(&m, &s, Coords::Polar).unwrap();
        assert!((inj.p[0] - 10.0 * 0.1f64.sin()).abs() < 1e-12);
        assert!((inj.p[0] - 0.998_334_166_468_281_5).abs() < 1e-12);
        let r = ac_injections(&m, &s, Coords::Rect).unwrap();
        assert!((r.p[0] - inj.p[0]).abs() < 1e-12);
    }

    #[test]
    fn series_branch_currents_are_antisymmetric() {
        let m = build_admittance(&two_bus(",\"r\":0.02"));
        let s = ComplexState::polar(vec![1.02, 0.97], vec![0.05, -0.1]).unwrap();
        let f = branch_flows(&m, &s).unwrap()[0];
        assert_eq!(f.i_to, -f.i_from);

        let charged = build_admittance(&two_bus(",\"b_c\":0.3"));
        let f = branch_flows(&charged, &s).unwrap()[0];
        assert!((f.i_to + f.i_from).norm() > 1e-3);
    }

    #[test]
    fn dc_injections_by_hand() {
        let dc = build_dc(&two_bus(""));
        let inj = dc_injections(&dc, &[0.1, 0.0], &[1.0, 1.0]).unwrap();
        assert!((inj.p[0] - 1.0).abs() < 1e-12 && (inj.p[1] + 1.0).abs() < 1e-12);
        let flat = dc_injections(&dc, &[0.3, 0.3], &[1.0, 1.0]).unwrap();
        assert!(flat.p.iter().all(|p| p.abs() < 1e-12));
        assert!(matches!(
            dc_injections(&dc, &[0.1], &[1.0, 1.0]),
            Err(GridError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn conversions_round_trip() {
        let s = ComplexState::polar(vec![1.05, 0.93], vec![-0.3, 2.9]).unwrap();
        let back = s.to_rect().to_polar();
        let (a, b) = (s.phasors(), back.phasors());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = two_bus(",\"r\":0.03,\"b_c\":0.1,\"tap\":0.97,\"shift\":0.05");
        let m = build_admittance(&c);
        let vm = [1.03, 0.96];
        let va = [0.02, -0.07];
        let mk = |vm: &[f64], va: &[f64]| -> Vec<Complex64> {
            vm.iter().zip(va).map(|(m, a)| Complex64::from_polar(*m, *a)).collect()
        };
        let v = mk(&vm, &va);
        let (da, dm) = injection_jacobian(&m, &v);
        let h = 1e-7;
        for k in 0..2 {
            let mut va2 = va;
            va2[k] += h;
            let mut vm2 = vm;
            vm2[k] += h;
            let s0 = complex_injections(&m, &v);
            let sa = complex_injections(&m, &mk(&vm, &va2));
            let sm = complex_injections(&m, &mk(&vm2, &va));
            for r in 0..2 {
                assert!(((sa[r] - s0[r]) / h - da[(r, k)]).norm() < 1e-5);
                assert!(((sm[r] - s0[r]) / h - dm[(r, k)]).norm() < 1e-5);
            }
            for at_from in [true, false] {
                let flow = |v: &[Complex64]| {
                    let f = branch_flows(&m, &ComplexState::from_phasors(v)).unwrap()[0];
                    if at_from {
                        f.s_from
                    } else {
                        f.s_to
                    }
                };
                let sens = flow_sensitivity(&m, &v, 0, at_from);
                let (ea, em) = if k == 0 {
                    (sens.d_va_from, sens.d_vm_from)
                } else {
                    (sens.d_va_to, sens.d_vm_to)
                };
                assert!(((flow(&mk(&vm, &va2)) - flow(&v)) / h - ea).norm() < 1e-5);
                assert!(((flow(&mk(&vm2, &va)) - flow(&v)) / h - em).norm() < 1e-5);
            }
        }
    }
}
