//! DC linear power flow and Newton–Raphson AC power flow in polar form.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::linalg;
use crate::netmodel::{build_admittance, complex_injections, injection_jacobian, ComplexState, DcModel, GridCase};

/// Tolerance on `Σ p` accepted by [`solve_dc`].
pub const BALANCE_TOL: f64 = 1e-9;

/// Solve `B_x θ = p` with `θ[reference] = 0`. `reference` is a bus position.
pub fn solve_dc(model: &DcModel, p: &[f64], reference: usize) -> Result<Vec<f64>> {
    let n = model.n_bus();
    if p.len() != n {
        return Err(GridError::DimensionMismatch {
            what: "injections",
            expected: n,
            got: p.len(),
        });
    }
    if reference >= n {
        return Err(GridError::InvalidInput(format!(
            "reference bus position {reference} out of range"
        )));
    }
    let total: f64 = p.iter().sum();
    if total.abs() > BALANCE_TOL {
        return Err(GridError::Unbalanced(total));
    }
    if model.n_components() > 1 {
        return Err(GridError::Disconnected);
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != reference).collect();
    let bx = model.laplacian();
    let reduced = DMatrix::from_fn(n - 1, n - 1, |i, j| bx[(keep[i], keep[j])]);
    let rhs = DVector::from_iterator(n - 1, keep.iter().map(|&i| p[i]));
    let sol = reduced
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| GridError::Singular("reduced Laplacian".into()))?;
    let mut theta = vec![0.0; n];
    for (k, &i) in keep.iter().enumerate() {
        theta[i] = sol[k];
    }
    Ok(theta)
}

/// Fixed quantities of one bus in the standard power-flow problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BusSpec {
    Slack { v: f64 },
    Pv { p: f64, v: f64 },
    Pq { p: f64, q: f64 },
}

/// One entry of a power-flow specification file, keyed by bus id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PfEntry {
    pub bus: usize,
    #[serde(flatten)]
    pub spec: BusSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSpec {
    buses: Vec<BusSpec>,
}

impl PfSpec {
    /// `buses` is indexed by bus position in `case`.
    pub fn new(case: &GridCase, buses: Vec<BusSpec>) -> Result<Self> {
        if buses.len() != case.n_bus() {
            return Err(GridError::DimensionMismatch {
                what: "bus specifications",
                expected: case.n_bus(),
                got: buses.len(),
            });
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| matches!(b, BusSpec::Slack { .. }))
            .map(|(i, _)| i)
            .collect();
        match slacks.as_slice() {
            [] => return Err(GridError::MissingSlack),
            [s] if *s != case.slack() => {
                return Err(GridError::InvalidInput(
                    "power-flow slack differs from the case reference bus".into(),
                ))
            }
            [_] => {}
            more => return Err(GridError::MultipleSlack(more.len())),
        }
        Ok(Self { buses })
    }

    /// Build from id-keyed entries; every bus must appear exactly once.
    pub fn from_entries(case: &GridCase, entries: &[PfEntry]) -> Result<Self> {
        let mut slots: Vec<Option<BusSpec>> = vec![None; case.n_bus()];
        for e in entries {
            let i = case.bus_index(e.bus)?;
            if slots[i].replace(e.spec).is_some() {
                return Err(GridError::InvalidInput(format!("bus {} specified twice", e.bus)));
            }
        }
        let buses = slots
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| GridError::InvalidInput(format!("bus {} not specified", case.buses()[i].id))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(case, buses)
    }

    /// Derive a specification from the case bus types, a generator dispatch
    /// (one entry per generator) and voltage setpoints keyed by bus id
    /// (missing setpoints default to 1.0).
    pub fn from_case(case: &GridCase, dispatch: &[f64], v_set: &HashMap<usize, f64>) -> Result<Self> {
        if dispatch.len() != case.generators().len() {
            return Err(GridError::DimensionMismatch {
                what: "generator dispatch",
                expected: case.generators().len(),
                got: dispatch.len(),
            });
        }
        let (pl, ql) = case.bus_loads();
        let mut pg = vec![0.0; case.n_bus()];
        for (g, p) in dispatch.iter().enumerate() {
            pg[case.generator_bus(g)] += p;
        }
        let buses = case
            .buses()
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let v = v_set.get(&b.id).copied().unwrap_or(1.0);
                match b.kind {
                    crate::netmodel::BusType::Slack => BusSpec::Slack { v },
                    crate::netmodel::BusType::Pv => BusSpec::Pv { p: pg[i] - pl[i], v },
                    crate::netmodel::BusType::Pq => BusSpec::Pq {
                        p: pg[i] - pl[i],
                        q: -ql[i],
                    },
                }
            })
            .collect();
        Self::new(case, buses)
    }

    pub fn buses(&self) -> &[BusSpec] {
        &self.buses
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AcOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfSolution {
    pub state: ComplexState,
    pub iterations: usize,
    /// Largest absolute power mismatch at the returned state.
    pub mismatch: f64,
    pub converged: bool,
}

/// Newton–Raphson on the polar mismatch equations from a flat start.
pub fn solve_ac(case: &GridCase, spec: &PfSpec, opts: AcOptions) -> Result<PfSolution> {
    let n = case.n_bus();
    if spec.buses.len() != n {
        return Err(GridError::DimensionMismatch {
            what: "bus specifications",
            expected: n,
            got: spec.buses.len(),
        });
    }
    let ym = build_admittance(case);
    let mut vm = vec![1.0; n];
    let mut va = vec![0.0; n];
    let mut pvpq = Vec::new();
    let mut pq = Vec::new();
    for (i, b) in spec.buses.iter().enumerate() {
        match *b {
            BusSpec::Slack { v } => vm[i] = v,
            BusSpec::Pv { v, .. } => {
                vm[i] = v;
                pvpq.push(i);
            }
            BusSpec::Pq { .. } => {
                pvpq.push(i);
                pq.push(i);
            }
        }
    }
    let p_spec = |i: usize| match spec.buses[i] {
        BusSpec::Pv { p, .. } | BusSpec::Pq { p, .. } => p,
        BusSpec::Slack { .. } => 0.0,
    };
    let q_spec = |i: usize| match spec.buses[i] {
        BusSpec::Pq { q, .. } => q,
        _ => 0.0,
    };
    let (np, nq) = (pvpq.len(), pq.len());
    let mut iterations = 0;
    loop {
        let v: Vec<Complex64> = vm.iter().zip(&va).map(|(m, a)| Complex64::from_polar(*m, *a)).collect();
        let s = complex_injections(&ym, &v);
        let mut f = DVector::zeros(np + nq);
        for (r, &i) in pvpq.iter().enumerate() {
            f[r] = s[i].re - p_spec(i);
        }
        for (r, &i) in pq.iter().enumerate() {
            f[np + r] = s[i].im - q_spec(i);
        }
        let mismatch = f.amax();
        if mismatch <= opts.tol || iterations >= opts.max_iter || !mismatch.is_finite() {
            return Ok(PfSolution {
                state: ComplexState::Polar { vm, va },
                iterations,
                mismatch,
                converged: mismatch <= opts.tol,
            });
        }
        let (d_va, d_vm) = injection_jacobian(&ym, &v);
        let jac = DMatrix::from_fn(np + nq, np + nq, |r, c| {
            let (bus, re) = if r < np { (pvpq[r], true) } else { (pq[r - np], false) };
            let d = if c < np {
                d_va[(bus, pvpq[c])]
            } else {
                d_vm[(bus, pq[c - np])]
            };
            if re {
                d.re
            } else {
                d.im
            }
        });
        let dx = linalg::solve_lu(&jac, &(-f), "power-flow Jacobian")?;
        for (c, &i) in pvpq.iter().enumerate() {
            va[i] += dx[c];
        }
        for (c, &i) in pq.iter().enumerate() {
            vm[i] += dx[np + c];
        }
        iterations += 1;
    }
}

/// Reactive output needed at a generator bus versus its summed limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QLimitViolation {
    pub bus: usize,
    pub q_gen: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// Post-hoc reactive-limit check; PV buses are never switched to PQ.
pub fn q_limit_violations(case: &GridCase, state: &ComplexState) -> Vec<QLimitViolation> {
    let ym = build_admittance(case);
    let s = complex_injections(&ym, &state.phasors());
    let (_, ql) = case.bus_loads();
    let mut limits: HashMap<usize, (f64, f64)> = HashMap::new();
    for (g, gen) in case.generators().iter().enumerate() {
        let e = limits.entry(case.generator_bus(g)).or_insert((0.0, 0.0));
        e.0 += gen.q_min.unwrap_or(f64::NEG_INFINITY);
        e.1 += gen.q_max.unwrap_or(f64::INFINITY);
    }
    let mut out: Vec<QLimitViolation> = limits
        .into_iter()
        .filter_map(|(i, (lo, hi))| {
            let q_gen = s[i].im + ql[i];
            (q_gen < lo - 1e-9 || q_gen > hi + 1e-9).then(|| QLimitViolation {
                bus: case.buses()[i].id,
                q_gen,
                q_min: lo,
                q_max: hi,
            })
        })
        .collect();
    out.sort_by_key(|v| v.bus);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_dc, parse_case};

    fn two_bus() -> GridCase {
        parse_case(
            r#"{"version":1,"buses":[{"id":1,"type":"slack"},{"id":2,"type":"pq"}],
            "branches":[{"from":1,"to":2,"x":0.1}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn dc_hand_solve() {
        let dc = build_dc(&two_bus());
        let th = solve_dc(&dc, &[1.0, -1.0], 1).unwrap();
        assert!((th[0] - 0.1).abs() < 1e-14 && th[1] == 0.0);
        let zero = solve_dc(&dc, &[0.0, 0.0], 0).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
        assert!(matches!(solve_dc(&dc, &[1.0, 0.0], 0), Err(GridError::Unbalanced(_))));
    }

    #[test]
    fn dc_rejects_disconnected() {
        let c = parse_case(
            r#"{"version":1,"buses":[{"id":1,"type":"slack"},{"id":2,"type":"pq"},{"id":3,"type":"pq"}],
            "branches":[{"from":1,"to":2,"x":0.1}]}"#,
        )
        .unwrap();
        assert_eq!(
            solve_dc(&build_dc(&c), &[0.0, 0.0, 0.0], 0),
            Err(GridError::Disconnected)
        );
    }

    #[test]
    fn no_load_is_flat() {
        let c = two_bus();
        let spec = PfSpec::new(&c, vec![BusSpec::Slack { v: 1.0 }, BusSpec::Pq { p: 0.0, q: 0.0 }]).unwrap();
        let sol = solve_ac(&c, &spec, AcOptions::default()).unwrap();
        assert!(sol.converged && sol.iterations <= 1);
        assert_eq!(sol.state.angles(), vec![0.0, 0.0]);
    }

    #[test]
    fn inverse_of_hand_injection() {
        let c = two_bus();
        let p = 10.0 * 0.1f64.sin();
        let spec = PfSpec::new(&c, vec![BusSpec::Slack { v: 1.0 }, BusSpec::Pv { p: -p, v: 1.0 }]).unwrap();
        let sol = solve_ac(&c, &spec, AcOptions::default()).unwrap();
        assert!(sol.converged);
        assert!((sol.state.angles()[1] + 0.1).abs() < 1e-9);
    }

    #[test]
    fn spec_validation() {
        let c = two_bus();
        assert_eq!(
            PfSpec::new(&c, vec![BusSpec::Pq { p: 0.0, q: 0.0 }; 2]),
            Err(GridError::MissingSlack)
        );
        assert!(PfSpec::new(&c, vec![BusSpec::Slack { v: 1.0 }]).is_err());
    }

    #[test]
    fn reports_divergence_without_error() {
        let c = two_bus();
        // Far beyond the transfer limit of a 0.1 p.u. reactance line.
        let spec = PfSpec::new(&c, vec![BusSpec::Slack { v: 1.0 }, BusSpec::Pq { p: -30.0, q: 0.0 }]).unwrap();
        let sol = solve_ac(
            &c,
            &spec,
            AcOptions {
                tol: 1e-8,
                max_iter: 15,
            },
        )
        .unwrap();
        assert!(!sol.converged);
    }
}
