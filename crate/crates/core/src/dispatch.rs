//! Economic dispatch, DC optimal power flow and wind-aware dispatch.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::netmodel::{build_dc, GridCase, QuadCost};
use crate::optim::{bisect, solve_qp, QpBuilder, QpOptions, QpSolution, QpStatus};

/// Generator cost curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CostFunction {
    Quadratic {
        #[serde(default)]
        c2: f64,
        #[serde(default)]
        c1: f64,
        #[serde(default)]
        c0: f64,
    },
    /// Breakpoints `(p, cost)` with increasing `p` and nondecreasing slopes.
    PiecewiseLinear { points: Vec<[f64; 2]> },
}

impl From<QuadCost> for CostFunction {
    fn from(c: QuadCost) -> Self {
        CostFunction::Quadratic {
            c2: c.c2,
            c1: c.c1,
            c0: c.c0,
        }
    }
}

impl CostFunction {
    pub fn quadratic(c2: f64, c1: f64, c0: f64) -> Self {
        CostFunction::Quadratic { c2, c1, c0 }
    }

    fn segments(points: &[[f64; 2]]) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        points
            .windows(2)
            .map(|w| (w[0][0], w[1][0], (w[1][1] - w[0][1]) / (w[1][0] - w[0][0])))
    }

    pub fn eval(&self, p: f64) -> f64 {
        match self {
            CostFunction::Quadratic { c2, c1, c0 } => c2 * p * p + c1 * p + c0,
            CostFunction::PiecewiseLinear { points } => {
                let last = points.len() - 1;
                let k = points[..last]
                    .iter()
                    .rposition(|q| q[0] <= p)
                    .unwrap_or(0)
                    .min(last - 1);
                let (a, b) = (points[k], points[k + 1]);
                a[1] + (b[1] - a[1]) / (b[0] - a[0]) * (p - a[0])
            }
        }
    }

    /// Right derivative at `p`.
    pub fn marginal(&self, p: f64) -> f64 {
        match self {
            CostFunction::Quadratic { c2, c1, .. } => 2.0 * c2 * p + c1,
            CostFunction::PiecewiseLinear { points } => Self::segments(points)
                .find(|&(_, x1, _)| p < x1)
                .or_else(|| Self::segments(points).last())
                .map(|s| s.2)
                .unwrap_or(0.0),
        }
    }

    pub fn is_strictly_convex(&self) -> bool {
        matches!(self, CostFunction::Quadratic { c2, .. } if *c2 > 0.0)
    }

    fn validate(&self, p_min: f64, p_max: f64) -> std::result::Result<(), String> {
        match self {
            CostFunction::Quadratic { c2, c1, c0 } => {
                if !(c2.is_finite() && c1.is_finite() && c0.is_finite()) {
                    return Err("non-finite cost coefficient".into());
                }
                if *c2 < 0.0 {
                    return Err(format!("nonconvex cost c2 = {c2}"));
                }
            }
            CostFunction::PiecewiseLinear { points } => {
                if points.len() < 2 {
                    return Err("piecewise-linear cost needs at least two breakpoints".into());
                }
                if points.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err("breakpoints must have increasing p".into());
                }
                let slopes: Vec<f64> = Self::segments(points).map(|s| s.2).collect();
                if slopes.windows(2).any(|w| w[1] < w[0] - 1e-12 * (1.0 + w[0].abs())) {
                    return Err("piecewise-linear cost is not convex".into());
                }
                if points[0][0] > p_min || points[points.len() - 1][0] < p_max {
                    return Err("breakpoints do not cover [p_min, p_max]".into());
                }
            }
        }
        if self.marginal(p_min) < 0.0 {
            return Err("cost decreases at p_min".into());
        }
        Ok(())
    }

    /// Largest output in `[lo, hi]` whose marginal cost does not exceed `price`.
    pub(crate) fn response(&self, price: f64, lo: f64, hi: f64) -> f64 {
        match self {
            CostFunction::Quadratic { c2, c1, .. } if *c2 > 0.0 => ((price - c1) / (2.0 * c2)).clamp(lo, hi),
            CostFunction::Quadratic { c1, .. } => {
                if price >= *c1 {
                    hi
                } else {
                    lo
                }
            }
            CostFunction::PiecewiseLinear { points } => {
                let mut p = lo;
                for (_, x1, s) in Self::segments(points) {
                    if x1 <= lo {
                        continue;
                    }
                    if s > price {
                        break;
                    }
                    p = x1.min(hi);
                }
                p
            }
        }
    }

    pub(crate) fn add_to_qp(&self, qp: &mut QpBuilder, var: usize, epigraph: Option<usize>) {
        match self {
            CostFunction::Quadratic { c2, c1, .. } => {
                qp.quad(var, var, *c2).lin(var, *c1);
            }
            CostFunction::PiecewiseLinear { points } => {
                let t = epigraph.expect("epigraph variable for piecewise-linear cost");
                qp.lin(t, 1.0);
                for (k, (x0, _, s)) in Self::segments(points).enumerate() {
                    // t ≥ cost(x0) + s (p − x0)
                    qp.le(vec![(var, s), (t, -1.0)], s * x0 - points[k][1]);
                }
            }
        }
    }
}

/// A generator's cost curve together with its output limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenOffer {
    pub cost: CostFunction,
    pub p_min: f64,
    pub p_max: f64,
}

impl GenOffer {
    pub fn new(cost: CostFunction, p_min: f64, p_max: f64) -> Self {
        Self { cost, p_min, p_max }
    }

    pub fn from_case(case: &GridCase) -> Vec<GenOffer> {
        case.generators()
            .iter()
            .map(|g| GenOffer::new(g.cost.into(), g.p_min, g.p_max))
            .collect()
    }
}

pub(crate) fn validate_offers(offers: &[GenOffer]) -> Result<()> {
    if offers.is_empty() {
        return Err(GridError::InvalidInput("no generators".into()));
    }
    for (index, o) in offers.iter().enumerate() {
        let bad = |reason: String| GridError::InvalidGenerator { index, reason };
        if !(o.p_min.is_finite() && o.p_max.is_finite()) || o.p_min > o.p_max {
            return Err(bad(format!("limits [{}, {}]", o.p_min, o.p_max)));
        }
        o.cost.validate(o.p_min, o.p_max).map_err(bad)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Binding {
    GenMin { generator: usize },
    GenMax { generator: usize },
    LineLimit { branch: usize, flow: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub p_gen: Vec<f64>,
    /// System price (dispatch without a network).
    pub lambda: Option<f64>,
    /// Per-bus prices (network dispatch).
    pub lmps: Vec<f64>,
    pub theta: Vec<f64>,
    pub flows: Vec<f64>,
    pub objective: f64,
    pub binding: Vec<Binding>,
    /// Demand the generators were asked to cover.
    pub demand: f64,
    /// Largest disagreement between the price-bisection and QP solutions.
    pub agreement: Option<f64>,
}

fn qp_opts() -> QpOptions {
    QpOptions {
        tol: 1e-11,
        max_iter: 300,
    }
}

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-7 * (1.0 + b.abs())
}

fn gen_bindings(offers: &[GenOffer], p: &[f64]) -> Vec<Binding> {
    let mut out = Vec::new();
    for (g, (o, &pg)) in offers.iter().zip(p).enumerate() {
        if o.p_max > o.p_min && near(pg, o.p_min) {
            out.push(Binding::GenMin { generator: g });
        } else if near(pg, o.p_max) {
            out.push(Binding::GenMax { generator: g });
        }
    }
    out
}

/// Adds generator variables `0..G` and epigraph variables after `first_free`;
/// returns the number of variables used.
fn add_generators(qp: &mut QpBuilder, offers: &[GenOffer], first_free: usize) -> usize {
    let mut next = first_free;
    for (g, o) in offers.iter().enumerate() {
        let epi = matches!(o.cost, CostFunction::PiecewiseLinear { .. }).then(|| {
            next += 1;
            next - 1
        });
        o.cost.add_to_qp(qp, g, epi);
        qp.bounds(g, o.p_min, o.p_max);
    }
    next
}

fn n_epigraph(offers: &[GenOffer]) -> usize {
    offers
        .iter()
        .filter(|o| matches!(o.cost, CostFunction::PiecewiseLinear { .. }))
        .count()
}

fn checked(sol: QpSolution, what: &str) -> Result<QpSolution> {
    match sol.status {
        QpStatus::Optimal => Ok(sol),
        QpStatus::Infeasible => Err(GridError::Infeasible(what.into())),
        QpStatus::MaxIter => Err(GridError::Singular(format!("{what}: QP did not converge"))),
    }
}

fn price_bisection(offers: &[GenOffer], net: f64, at_least: bool) -> Result<f64> {
    let p_floor: f64 = offers.iter().map(|o| o.p_min).sum();
    if at_least && p_floor >= net {
        return Ok(0.0);
    }
    let lo = offers
        .iter()
        .map(|o| o.cost.marginal(o.p_min))
        .fold(f64::INFINITY, f64::min)
        - 1.0;
    let hi = offers
        .iter()
        .map(|o| o.cost.marginal(o.p_max))
        .fold(f64::NEG_INFINITY, f64::max)
        + 1.0;
    let supply = |price: f64| -> f64 { offers.iter().map(|o| o.cost.response(price, o.p_min, o.p_max)).sum() };
    let gap = |price: f64| if supply(price) >= net { 1.0 } else { -1.0 };
    bisect(gap, lo, hi, 1e-13 * (1.0 + hi.abs() + lo.abs()))
}

fn dispatch_core(offers: &[GenOffer], net: f64, at_least: bool) -> Result<DispatchSolution> {
    validate_offers(offers)?;
    let floor: f64 = offers.iter().map(|o| o.p_min).sum();
    let cap: f64 = offers.iter().map(|o| o.p_max).sum();
    if !net.is_finite() || net > cap + 1e-12 || (!at_least && net < floor - 1e-12) {
        return Err(GridError::Infeasible(format!(
            "demand {net} outside generation range [{floor}, {cap}]"
        )));
    }
    let g = offers.len();
    let mut qp = QpBuilder::new(g + n_epigraph(offers));
    add_generators(&mut qp, offers, g);
    let row: Vec<(usize, f64)> = (0..g).map(|i| (i, 1.0)).collect();
    let balance = if at_least {
        qp.le(row.iter().map(|&(i, v)| (i, -v)).collect(), -net)
    } else {
        qp.eq(row, net)
    };
    let sol = checked(solve_qp(&qp.build(), qp_opts())?, "dispatch")?;
    let lambda_qp = if at_least {
        sol.ineq_duals[balance]
    } else {
        sol.eq_duals[balance]
    };
    let lambda = price_bisection(offers, net, at_least)?;
    let p_qp: Vec<f64> = sol.x.iter().take(g).copied().collect();
    let mut agreement = (lambda - lambda_qp).abs();
    let p_gen = if offers.iter().all(|o| o.cost.is_strictly_convex()) {
        let p_b: Vec<f64> = offers
            .iter()
            .map(|o| o.cost.response(lambda, o.p_min, o.p_max))
            .collect();
        for (a, b) in p_b.iter().zip(&p_qp) {
            agreement = agreement.max((a - b).abs());
        }
        p_b
    } else {
        p_qp
    };
    let objective = offers.iter().zip(&p_gen).map(|(o, &p)| o.cost.eval(p)).sum();
    Ok(DispatchSolution {
        binding: gen_bindings(offers, &p_gen),
        p_gen,
        lambda: Some(lambda),
        lmps: Vec::new(),
        theta: Vec::new(),
        flows: Vec::new(),
        objective,
        demand: net,
        agreement: Some(agreement),
    })
}

/// Single-bus dispatch meeting `demand` minus an optional wind forecast
/// (wind is treated as negative load).
pub fn economic_dispatch(offers: &[GenOffer], demand: f64, wind_forecast: Option<f64>) -> Result<DispatchSolution> {
    dispatch_core(offers, demand - wind_forecast.unwrap_or(0.0), false)
}

/// DC optimal power flow over `case` (loads, line limits and generator buses
/// taken from the case). Per-bus balance prices are returned as LMPs.
pub fn dc_opf(case: &GridCase, offers: &[GenOffer], angle_penalty: f64) -> Result<DispatchSolution> {
    validate_offers(offers)?;
    if offers.len() != case.generators().len() {
        return Err(GridError::DimensionMismatch {
            what: "generator offers",
            expected: case.generators().len(),
            got: offers.len(),
        });
    }
    if !(angle_penalty >= 0.0 && angle_penalty.is_finite()) {
        return Err(GridError::InvalidInput(format!("angle penalty {angle_penalty}")));
    }
    if !case.is_connected() {
        return Err(GridError::Disconnected);
    }
    let (loads, _) = case.bus_loads();
    let total: f64 = loads.iter().sum();
    let cap: f64 = offers.iter().map(|o| o.p_max).sum();
    let floor: f64 = offers.iter().map(|o| o.p_min).sum();
    if total > cap || total < floor {
        return Err(GridError::Infeasible(format!(
            "load {total} outside generation range [{floor}, {cap}]"
        )));
    }
    let dc = build_dc(case);
    let (ng, nb) = (offers.len(), case.n_bus());
    let th = |b: usize| ng + b;
    let mut qp = QpBuilder::new(ng + nb + n_epigraph(offers));
    add_generators(&mut qp, offers, ng + nb);
    let bx = dc.laplacian();
    let mut rows = Vec::with_capacity(nb);
    for b in 0..nb {
        let mut row: Vec<(usize, f64)> = (0..ng)
            .filter(|&g| case.generator_bus(g) == b)
            .map(|g| (g, 1.0))
            .collect();
        row.extend((0..nb).filter(|&j| bx[(b, j)] != 0.0).map(|j| (th(j), -bx[(b, j)])));
        rows.push(qp.eq(row, loads[b]));
    }
    qp.eq(vec![(th(case.slack()), 1.0)], 0.0);
    let mut limits = Vec::new();
    for (l, br) in case.branches().iter().enumerate() {
        let (f, t) = dc.ends(l);
        let w = dc.weights()[l];
        if let Some(cap) = br.p_max {
            let up = qp.le(vec![(th(f), w), (th(t), -w)], cap);
            let down = qp.le(vec![(th(f), -w), (th(t), w)], cap);
            limits.push((l, up, down));
        }
        if angle_penalty > 0.0 {
            qp.quad(th(f), th(f), angle_penalty)
                .quad(th(t), th(t), angle_penalty)
                .quad(th(f), th(t), -2.0 * angle_penalty);
        }
    }
    let sol = checked(solve_qp(&qp.build(), qp_opts())?, "load exceeds deliverable capacity")?;
    let p_gen: Vec<f64> = sol.x.iter().take(ng).copied().collect();
    let theta = DVector::from_iterator(nb, (0..nb).map(|b| sol.x[th(b)]));
    let flows: Vec<f64> = dc.flows(&theta).iter().copied().collect();
    let mut binding = gen_bindings(offers, &p_gen);
    for &(l, up, down) in &limits {
        let cap = case.branches()[l].p_max.unwrap_or(f64::INFINITY);
        if near(flows[l].abs(), cap) || sol.ineq_duals[up].max(sol.ineq_duals[down]) > 1e-6 {
            binding.push(Binding::LineLimit {
                branch: l,
                flow: flows[l],
            });
        }
    }
    let mut objective: f64 = offers.iter().zip(&p_gen).map(|(o, &p)| o.cost.eval(p)).sum();
    for &(f, t) in (0..case.n_branch()).map(|l| dc.ends(l)).collect::<Vec<_>>().iter() {
        objective += angle_penalty * (theta[f] - theta[t]).powi(2);
    }
    Ok(DispatchSolution {
        p_gen,
        lambda: None,
        lmps: rows.iter().map(|&r| sol.eq_duals[r]).collect(),
        theta: theta.iter().copied().collect(),
        flows,
        objective,
        binding,
        demand: total,
        agreement: None,
    })
}

/// Distribution of total wind output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WindModel {
    Weibull {
        shape: f64,
        scale: f64,
    },
    /// Deterministic output.
    Constant {
        value: f64,
    },
}

impl WindModel {
    /// Inverse CDF.
    pub fn quantile(&self, prob: f64) -> f64 {
        match *self {
            WindModel::Weibull { shape, scale } => scale * (-(1.0 - prob).ln()).powf(1.0 / shape),
            WindModel::Constant { value } => value,
        }
    }

    pub fn median(&self) -> f64 {
        self.quantile(0.5)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindSpec {
    #[serde(default)]
    pub forecast: Option<f64>,
    #[serde(default)]
    pub model: Option<WindModel>,
    /// Probability with which generation plus wind must cover demand.
    #[serde(default = "default_reliability")]
    pub reliability: f64,
}

fn default_reliability() -> f64 {
    0.99
}

impl WindSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.reliability > 0.0 && self.reliability < 1.0) {
            return Err(GridError::InvalidInput(format!(
                "reliability {} outside (0, 1)",
                self.reliability
            )));
        }
        match self.model {
            Some(WindModel::Weibull { shape, scale }) if !(shape > 0.0 && scale > 0.0) => Err(GridError::InvalidInput(
                format!("Weibull shape {shape} and scale {scale} must be positive"),
            )),
            Some(WindModel::Constant { value }) if !(value >= 0.0) => {
                Err(GridError::InvalidInput(format!("wind output {value}")))
            }
            _ => Ok(()),
        }
    }

    /// Wind output exceeded with probability `reliability`.
    pub fn firm_output(&self) -> Result<f64> {
        self.validate()?;
        let model = self
            .model
            .ok_or_else(|| GridError::InvalidInput("wind distribution not set".into()))?;
        Ok(model.quantile(1.0 - self.reliability))
    }
}

/// Dispatch such that generation plus wind covers `demand` with probability
/// `wind.reliability`; surplus generation may be curtailed.
pub fn chance_ed(offers: &[GenOffer], demand: f64, wind: &WindSpec) -> Result<DispatchSolution> {
    let q = wind.firm_output()?;
    dispatch_core(offers, demand - q, true)
}
