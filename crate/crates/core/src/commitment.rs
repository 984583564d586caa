//! Single-bus unit commitment: Lagrangian relaxation with per-unit dynamic
//! programming, and an enumeration oracle for small instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dispatch::{validate_offers, CostFunction, GenOffer};
use crate::error::{GridError, Result};
use crate::optim::{solve_qp, subgradient_max, QpBuilder, QpOptions, QpStatus, StepRule, SubgradientOptions};

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub cost: CostFunction,
    pub p_min: f64,
    pub p_max: f64,
    /// Charged on every off-to-on transition.
    #[serde(default)]
    pub startup_cost: f64,
    #[serde(default)]
    pub ramp_up: Option<f64>,
    #[serde(default)]
    pub ramp_down: Option<f64>,
    #[serde(default = "one")]
    pub min_up: usize,
    #[serde(default = "one")]
    pub min_down: usize,
    /// Status before the first period; the unit is taken to have been in
    /// this state long enough to change it freely.
    #[serde(default)]
    pub initially_on: bool,
    #[serde(default)]
    pub initial_output: f64,
    #[serde(default)]
    pub must_run: bool,
}

impl UnitSpec {
    pub fn new(cost: CostFunction, p_min: f64, p_max: f64) -> Self {
        Self {
            cost,
            p_min,
            p_max,
            startup_cost: 0.0,
            ramp_up: None,
            ramp_down: None,
            min_up: 1,
            min_down: 1,
            initially_on: false,
            initial_output: 0.0,
            must_run: false,
        }
    }

    fn ramp_ok(&self, prev: f64, next: f64) -> bool {
        let tol = 1e-9 * (1.0 + self.p_max.abs());
        next - prev <= self.ramp_up.unwrap_or(f64::INFINITY) + tol
            && prev - next <= self.ramp_down.unwrap_or(f64::INFINITY) + tol
    }

    /// Whether an on/off row honors minimum up and down times and must-run.
    pub fn respects_min_times(&self, row: &[bool]) -> bool {
        if self.must_run && row.iter().any(|&u| !u) {
            return false;
        }
        let n = row.len();
        let mut start = 0;
        while start < n {
            let val = row[start];
            let len = row[start..].iter().take_while(|&&u| u == val).count();
            let reaches_end = start + len == n;
            let continues_initial = start == 0 && val == self.initially_on;
            let need = if val { self.min_up } else { self.min_down };
            if !reaches_end && !continues_initial && len < need {
                return false;
            }
            start += len;
        }
        true
    }

    fn startups(&self, row: &[bool]) -> usize {
        let mut prev = self.initially_on;
        let mut count = 0;
        for &u in row {
            if u && !prev {
                count += 1;
            }
            prev = u;
        }
        count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UcInstance {
    pub demand: Vec<f64>,
    pub units: Vec<UnitSpec>,
}

impl UcInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GridError::MalformedJson(e.to_string()))
    }

    pub fn periods(&self) -> usize {
        self.demand.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.demand.is_empty() {
            return Err(GridError::InvalidInput("no periods".into()));
        }
        if let Some(d) = self.demand.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(GridError::InvalidInput(format!("demand {d}")));
        }
        let offers: Vec<GenOffer> = self
            .units
            .iter()
            .map(|u| GenOffer::new(u.cost.clone(), u.p_min, u.p_max))
            .collect();
        validate_offers(&offers)?;
        for (index, u) in self.units.iter().enumerate() {
            let bad = |reason: &str| GridError::InvalidGenerator {
                index,
                reason: reason.into(),
            };
            if u.min_up == 0 || u.min_down == 0 {
                return Err(bad("minimum up and down times must be at least 1"));
            }
            if !(u.startup_cost >= 0.0) {
                return Err(bad("negative startup cost"));
            }
            if u.ramp_up.is_some_and(|r| !(r > 0.0)) || u.ramp_down.is_some_and(|r| !(r > 0.0)) {
                return Err(bad("ramp limits must be positive"));
            }
            if u.initially_on && !(u.initial_output >= u.p_min - 1e-12 && u.initial_output <= u.p_max + 1e-12) {
                return Err(bad("initial output outside limits"));
            }
        }
        let cap: f64 = self.units.iter().map(|u| u.p_max).sum();
        let short: Vec<usize> = (0..self.periods()).filter(|&t| self.demand[t] > cap).collect();
        if !short.is_empty() {
            return Err(shortfall(&short));
        }
        Ok(())
    }
}

fn shortfall(periods: &[usize]) -> GridError {
    GridError::Infeasible(format!("capacity shortfall in periods {periods:?}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UcSchedule {
    /// `on[m][t]`
    pub on: Vec<Vec<bool>>,
    pub output: Vec<Vec<f64>>,
    pub cost: f64,
    pub startup_cost: f64,
    /// Lagrangian lower bound on the optimal cost.
    pub dual_bound: Option<f64>,
    /// `(cost − dual_bound) / |cost|`
    pub gap: Option<f64>,
    /// Multipliers of the balance constraints at the best dual iterate.
    pub prices: Vec<f64>,
    /// Best dual value after each iteration.
    pub dual_trace: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcOptions {
    pub iterations: usize,
    /// Output levels per unit in the dynamic program.
    pub levels: usize,
    /// Defaults to normalized diminishing steps scaled by typical marginal cost.
    pub step: Option<StepRule>,
    /// Distinct dual-iterate commitments tried in primal recovery.
    pub candidates: usize,
    /// Local search runs when `units × periods` is at most this.
    pub polish_limit: usize,
}

impl Default for UcOptions {
    fn default() -> Self {
        Self {
            iterations: 500,
            levels: 21,
            step: None,
            candidates: 20,
            polish_limit: 48,
        }
    }
}

struct UnitPlan {
    value: f64,
    on: Vec<bool>,
    output: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Node {
    value: f64,
    on: bool,
    counter: usize,
    p: f64,
    prev: usize,
}

/// Minimizes `Σ_t u_t (C(p_t) − λ_t p_t) + startups` for one unit by dynamic
/// programming over (status, clipped counter, output level).
fn unit_dp(unit: &UnitSpec, prices: &[f64], levels: &[Vec<f64>], ramps: bool) -> UnitPlan {
    let (tu, td) = (unit.min_up, unit.min_down);
    let t_len = prices.len();
    let start = Node {
        value: 0.0,
        on: unit.initially_on,
        counter: if unit.initially_on { tu } else { td },
        p: unit.initial_output,
        prev: usize::MAX,
    };
    let mut layers: Vec<Vec<Node>> = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let lv = &levels[t];
        let slots = td + tu * lv.len();
        let mut next: Vec<Option<Node>> = vec![None; slots];
        let prev_layer: Vec<Node> = if t == 0 { vec![start] } else { layers[t - 1].clone() };
        let mut relax = |slot: usize, node: Node| {
            if next[slot].is_none_or(|n| node.value < n.value) {
                next[slot] = Some(node);
            }
        };
        for (i, from) in prev_layer.iter().enumerate() {
            let stage = |p: f64| unit.cost.eval(p) - prices[t] * p;
            if from.on {
                let k = (from.counter + 1).min(tu);
                for (j, &p) in lv.iter().enumerate() {
                    if ramps && !unit.ramp_ok(from.p, p) {
                        continue;
                    }
                    let node = Node {
                        value: from.value + stage(p),
                        on: true,
                        counter: k,
                        p,
                        prev: i,
                    };
                    relax(td + (k - 1) * lv.len() + j, node);
                }
                if from.counter >= tu && !unit.must_run {
                    let node = Node {
                        value: from.value,
                        on: false,
                        counter: 1,
                        p: 0.0,
                        prev: i,
                    };
                    relax(0, node);
                }
            } else {
                if !unit.must_run {
                    let k = (from.counter + 1).min(td);
                    let node = Node {
                        value: from.value,
                        on: false,
                        counter: k,
                        p: 0.0,
                        prev: i,
                    };
                    relax(k - 1, node);
                }
                if from.counter >= td {
                    for (j, &p) in lv.iter().enumerate() {
                        let node = Node {
                            value: from.value + unit.startup_cost + stage(p),
                            on: true,
                            counter: 1,
                            p,
                            prev: i,
                        };
                        relax(td + j, node);
                    }
                }
            }
        }
        layers.push(next.into_iter().flatten().collect());
    }
    let last = &layers[t_len - 1];
    let (mut idx, best) = last
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value))
        .map(|(i, n)| (i, n.value))
        .expect("the off path is always available");
    let mut on = vec![false; t_len];
    let mut output = vec![0.0; t_len];
    for t in (0..t_len).rev() {
        let n = layers[t][idx];
        on[t] = n.on;
        output[t] = if n.on { n.p } else { 0.0 };
        idx = n.prev;
    }
    UnitPlan {
        value: best,
        on,
        output,
    }
}

fn grid_levels(unit: &UnitSpec, prices: &[f64], count: usize) -> Vec<Vec<f64>> {
    prices
        .iter()
        .map(|&price| {
            let mut lv: Vec<f64> = if unit.p_max > unit.p_min && count > 1 {
                (0..count)
                    .map(|i| unit.p_min + (unit.p_max - unit.p_min) * i as f64 / (count - 1) as f64)
                    .collect()
            } else {
                vec![unit.p_min]
            };
            lv.push(unit.cost.response(price, unit.p_min, unit.p_max));
            if unit.initially_on {
                lv.push(unit.initial_output);
            }
            lv.sort_by(f64::total_cmp);
            lv.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
            lv
        })
        .collect()
}

/// Exact Lagrangian value with ramps relaxed; a valid lower bound.
fn relaxed_dual(inst: &UcInstance, prices: &[f64]) -> f64 {
    let mut value: f64 = prices.iter().zip(&inst.demand).map(|(l, d)| l * d).sum();
    for unit in &inst.units {
        let levels: Vec<Vec<f64>> = prices
            .iter()
            .map(|&l| vec![unit.cost.response(l, unit.p_min, unit.p_max)])
            .collect();
        value += unit_dp(unit, prices, &levels, false).value;
    }
    value
}

fn qp_opts() -> QpOptions {
    QpOptions {
        tol: 1e-10,
        max_iter: 300,
    }
}

/// Multi-period dispatch of a fixed commitment with ramp limits.
///
/// With a `penalty`, balance may be violated at that linear cost; the
/// per-period shortfall and excess are returned alongside the schedule.
fn dispatch_commitment(
    inst: &UcInstance,
    on: &[Vec<bool>],
    penalty: Option<f64>,
) -> Result<(UcSchedule, Vec<f64>, Vec<f64>)> {
    let t_len = inst.periods();
    let n_units = inst.units.len();
    let mut index = vec![vec![usize::MAX; t_len]; n_units];
    let mut n = 0;
    for m in 0..n_units {
        for t in 0..t_len {
            if on[m][t] {
                index[m][t] = n;
                n += 1;
            }
        }
    }
    let n_epi = (0..n_units)
        .filter(|&m| matches!(inst.units[m].cost, CostFunction::PiecewiseLinear { .. }))
        .map(|m| on[m].iter().filter(|&&u| u).count())
        .sum::<usize>();
    let n_slack = if penalty.is_some() { 2 * t_len } else { 0 };
    let slack0 = n + n_epi;
    let mut qp = QpBuilder::new(n + n_epi + n_slack);
    let mut next_epi = n;
    for (m, unit) in inst.units.iter().enumerate() {
        for t in 0..t_len {
            let v = index[m][t];
            if v == usize::MAX {
                continue;
            }
            let epi = matches!(unit.cost, CostFunction::PiecewiseLinear { .. }).then(|| {
                next_epi += 1;
                next_epi - 1
            });
            unit.cost.add_to_qp(&mut qp, v, epi);
            qp.bounds(v, unit.p_min, unit.p_max);
            // None: ramp from the fixed initial output
            let prev = if t == 0 {
                unit.initially_on.then_some(None)
            } else {
                on[m][t - 1].then_some(Some(index[m][t - 1]))
            };
            if let Some(prev) = prev {
                let p0 = unit.initial_output;
                if let Some(r) = unit.ramp_up {
                    match prev {
                        Some(w) => qp.le(vec![(v, 1.0), (w, -1.0)], r),
                        None => qp.le(vec![(v, 1.0)], r + p0),
                    };
                }
                if let Some(r) = unit.ramp_down {
                    match prev {
                        Some(w) => qp.le(vec![(v, -1.0), (w, 1.0)], r),
                        None => qp.le(vec![(v, -1.0)], r - p0),
                    };
                }
            }
        }
    }
    for t in 0..t_len {
        let mut row: Vec<(usize, f64)> = (0..n_units).filter(|&m| on[m][t]).map(|m| (index[m][t], 1.0)).collect();
        if let Some(w) = penalty {
            let (short, excess) = (slack0 + 2 * t, slack0 + 2 * t + 1);
            row.push((short, 1.0));
            row.push((excess, -1.0));
            qp.lin(short, w).lin(excess, w);
            qp.bounds(short, 0.0, f64::INFINITY);
            qp.bounds(excess, 0.0, f64::INFINITY);
        } else if row.is_empty() {
            if inst.demand[t] > 1e-12 {
                return Err(shortfall(&[t]));
            }
            continue;
        }
        qp.eq(row, inst.demand[t]);
    }
    let mut output = vec![vec![0.0; t_len]; n_units];
    let mut short = vec![0.0; t_len];
    let mut excess = vec![0.0; t_len];
    if n + n_slack > 0 {
        let sol = solve_qp(&qp.build(), qp_opts())?;
        match sol.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                return Err(GridError::Infeasible(
                    "commitment cannot meet demand within output and ramp limits".into(),
                ))
            }
            QpStatus::MaxIter => return Err(GridError::Singular("dispatch QP did not converge".into())),
        }
        for m in 0..n_units {
            for t in 0..t_len {
                if on[m][t] {
                    let u = &inst.units[m];
                    output[m][t] = sol.x[index[m][t]].clamp(u.p_min, u.p_max);
                }
            }
        }
        if penalty.is_some() {
            for t in 0..t_len {
                short[t] = sol.x[slack0 + 2 * t].max(0.0);
                excess[t] = sol.x[slack0 + 2 * t + 1].max(0.0);
            }
        }
    }
    let mut cost = 0.0;
    let mut startup_cost = 0.0;
    for (m, unit) in inst.units.iter().enumerate() {
        startup_cost += unit.startup_cost * unit.startups(&on[m]) as f64;
        for t in 0..t_len {
            if on[m][t] {
                cost += unit.cost.eval(output[m][t]);
            }
        }
    }
    let sched = UcSchedule {
        on: on.to_vec(),
        output,
        cost: cost + startup_cost,
        startup_cost,
        dual_bound: None,
        gap: None,
        prices: Vec::new(),
        dual_trace: Vec::new(),
        iterations: 0,
    };
    Ok((sched, short, excess))
}

fn fixed_commitment_dispatch(inst: &UcInstance, on: &[Vec<bool>]) -> Result<UcSchedule> {
    dispatch_commitment(inst, on, None).map(|r| r.0)
}

/// Grows on-blocks until the row honors minimum up and down times.
fn extend_min_times(unit: &UnitSpec, row: &mut [bool]) {
    let n = row.len();
    while !unit.respects_min_times(row) {
        let mut start = 0;
        let mut changed = false;
        while start < n {
            let val = row[start];
            let len = row[start..].iter().take_while(|&&u| u == val).count();
            let end = start + len;
            let need = if val { unit.min_up } else { unit.min_down };
            let exempt = end == n || (start == 0 && val == unit.initially_on);
            if !exempt && len < need {
                if val {
                    row[end] = true;
                } else {
                    row[start..end].iter_mut().for_each(|u| *u = true);
                }
                changed = true;
                break;
            }
            start = end;
        }
        if unit.must_run {
            row.iter_mut().for_each(|u| *u = true);
            changed = true;
        }
        if !changed {
            break;
        }
    }
}

/// Shortens on-blocks until the row honors minimum up and down times: short
/// off-blocks are lengthened and short on-blocks dropped.
fn shrink_min_times(unit: &UnitSpec, row: &mut [bool]) {
    let n = row.len();
    for _ in 0..2 * n + 2 {
        if unit.respects_min_times(row) {
            return;
        }
        let mut start = 0;
        while start < n {
            let val = row[start];
            let len = row[start..].iter().take_while(|&&u| u == val).count();
            let end = start + len;
            let need = if val { unit.min_up } else { unit.min_down };
            let exempt = end == n || (start == 0 && val == unit.initially_on);
            if !exempt && len < need {
                if val {
                    row[start..end].iter_mut().for_each(|u| *u = false);
                } else {
                    row[end] = false;
                }
                break;
            }
            start = end;
        }
    }
}

/// Commitment by merit order: cheapest full-load units first until demand
/// is covered in each period.
fn priority_list(inst: &UcInstance) -> Vec<Vec<bool>> {
    let units = &inst.units;
    let mut order: Vec<usize> = (0..units.len()).collect();
    let avg = |m: usize| units[m].cost.eval(units[m].p_max) / units[m].p_max.max(1e-12);
    order.sort_by(|&a, &b| avg(a).total_cmp(&avg(b)));
    let mut on = vec![vec![false; inst.periods()]; units.len()];
    for (t, &d) in inst.demand.iter().enumerate() {
        let mut cap = 0.0;
        for &m in &order {
            if cap >= d {
                break;
            }
            on[m][t] = true;
            cap += units[m].p_max;
        }
    }
    on
}

/// Local search around a feasible schedule. Moves: flip one unit-period,
/// switch a unit's whole row on or off, or swap two units in one period.
fn polish(inst: &UcInstance, mut best: UcSchedule, passes: usize) -> UcSchedule {
    let (n_units, t_len) = (inst.units.len(), inst.periods());
    let set = |on: &mut Vec<Vec<bool>>, m: usize, t: usize, v: bool| {
        on[m][t] = v;
        if v {
            extend_min_times(&inst.units[m], &mut on[m]);
        } else {
            shrink_min_times(&inst.units[m], &mut on[m]);
        }
    };
    for _ in 0..passes {
        let mut moves: Vec<Vec<Vec<bool>>> = Vec::new();
        for m in 0..n_units {
            for v in [true, false] {
                let mut on = best.on.clone();
                on[m].iter_mut().for_each(|u| *u = v);
                moves.push(on);
            }
            for k in (0..n_units).filter(|&k| k != m) {
                let mut on = best.on.clone();
                on[m].iter_mut().for_each(|u| *u = true);
                on[k].iter_mut().for_each(|u| *u = false);
                moves.push(on);
            }
            for t in 0..t_len {
                let mut on = best.on.clone();
                set(&mut on, m, t, !best.on[m][t]);
                moves.push(on);
                for k in 0..n_units {
                    if k != m && best.on[m][t] && !best.on[k][t] {
                        let mut on = best.on.clone();
                        set(&mut on, m, t, false);
                        set(&mut on, k, t, true);
                        moves.push(on);
                    }
                }
            }
        }
        let mut improved = false;
        for on in moves {
            let Ok(on) = repair(inst, on) else {
                continue;
            };
            if on == best.on {
                continue;
            }
            if let Ok(s) = fixed_commitment_dispatch(inst, &on) {
                if s.cost < best.cost - 1e-9 * (1.0 + best.cost.abs()) {
                    best = s;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    best
}

/// Penalized dispatch of a commitment: (objective, shortfall periods,
/// excess periods).
fn assess(inst: &UcInstance, on: &[Vec<bool>], penalty: f64) -> Result<(f64, Vec<usize>, Vec<usize>)> {
    let (sched, short, excess) = dispatch_commitment(inst, on, Some(penalty))?;
    let tol = 1e-7 * (1.0 + inst.demand.iter().cloned().fold(0.0, f64::max));
    let pick = |v: &[f64]| (0..v.len()).filter(|&t| v[t] > tol).collect::<Vec<_>>();
    let slack: f64 = short.iter().chain(&excess).sum();
    Ok((sched.cost + penalty * slack, pick(&short), pick(&excess)))
}

/// Turns a relaxed commitment into one whose dispatch can meet demand
/// exactly. Each step commits a unit where output falls short or drops
/// part of an on-block where minimum output exceeds demand, choosing the
/// change with the lowest penalized dispatch cost.
fn repair(inst: &UcInstance, mut on: Vec<Vec<bool>>) -> Result<Vec<Vec<bool>>> {
    let t_len = inst.periods();
    let units = &inst.units;
    for (m, unit) in units.iter().enumerate() {
        extend_min_times(unit, &mut on[m]);
    }
    let penalty = 1e3
        * (1.0
            + units
                .iter()
                .map(|u| {
                    u.cost.marginal(u.p_max).abs() + (u.cost.eval(u.p_min).abs() + u.startup_cost) / u.p_max.max(1e-9)
                })
                .fold(0.0, f64::max));
    let (mut current, mut short, mut excess) = assess(inst, &on, penalty)?;
    for _ in 0..4 * units.len() * t_len + 4 {
        if short.is_empty() && excess.is_empty() {
            return Ok(on);
        }
        let mut trials = Vec::new();
        if let Some(&t) = short.first() {
            for m in (0..units.len()).filter(|&m| !on[m][t]) {
                let mut trial = on.clone();
                trial[m][t] = true;
                extend_min_times(&units[m], &mut trial[m]);
                trials.push(trial);
            }
        } else {
            let t = excess[0];
            for m in (0..units.len()).filter(|&m| on[m][t]) {
                let row = &on[m];
                let a = (0..=t).rev().take_while(|&s| row[s]).last().unwrap_or(t);
                let b = (t..t_len).take_while(|&s| row[s]).last().unwrap_or(t);
                for (lo, hi) in [(a, b), (t, t), (t, b), (a, t)] {
                    let mut trial = on.clone();
                    trial[m][lo..=hi].iter_mut().for_each(|u| *u = false);
                    shrink_min_times(&units[m], &mut trial[m]);
                    if units[m].respects_min_times(&trial[m]) && trial != on && !trials.contains(&trial) {
                        trials.push(trial);
                    }
                }
            }
        }
        let mut best: Option<(f64, Vec<Vec<bool>>, Vec<usize>, Vec<usize>)> = None;
        for trial in trials {
            let (obj, s2, e2) = assess(inst, &trial, penalty)?;
            if best.as_ref().is_none_or(|b| obj < b.0) {
                best = Some((obj, trial, s2, e2));
            }
        }
        match best {
            Some((obj, trial, s2, e2)) if obj < current - 1e-9 * (1.0 + current.abs()) => {
                (current, on, short, excess) = (obj, trial, s2, e2);
            }
            _ if !short.is_empty() => return Err(shortfall(&short)),
            _ => {
                return Err(GridError::Infeasible(format!(
                    "committed minimum output exceeds demand in periods {excess:?}"
                )))
            }
        }
    }
    Err(GridError::Infeasible("commitment repair did not settle".into()))
}

/// Lagrangian relaxation of the balance constraints with subgradient price
/// updates and per-unit dynamic programming, followed by primal recovery.
pub fn uc_lagrangian(inst: &UcInstance, opts: &UcOptions) -> Result<UcSchedule> {
    inst.validate()?;
    let t_len = inst.periods();
    let scale = inst.units.iter().map(|u| u.cost.marginal(u.p_max)).sum::<f64>() / inst.units.len() as f64;
    let step = opts.step.unwrap_or(StepRule::Normalized {
        a: 0.5 * scale.max(1.0) * (t_len as f64).sqrt(),
        b: 1.0,
    });
    let mut seen: Vec<(f64, Vec<Vec<bool>>)> = Vec::new();
    let mut seen_keys: HashSet<Vec<Vec<bool>>> = HashSet::new();
    let mut bound = f64::NEG_INFINITY;
    let oracle = |prices: &[f64]| {
        let mut value: f64 = prices.iter().zip(&inst.demand).map(|(l, d)| l * d).sum();
        let mut grad = inst.demand.clone();
        let mut on = Vec::with_capacity(inst.units.len());
        for unit in &inst.units {
            let plan = unit_dp(unit, prices, &grid_levels(unit, prices, opts.levels), true);
            value += plan.value;
            for t in 0..t_len {
                grad[t] -= plan.output[t];
            }
            on.push(plan.on);
        }
        bound = bound.max(relaxed_dual(inst, prices));
        if seen_keys.insert(on.clone()) {
            seen.push((value, on));
        }
        (value, grad)
    };
    let sg = subgradient_max(
        oracle,
        vec![scale; t_len],
        &SubgradientOptions {
            step,
            max_iter: opts.iterations.max(1),
            lower: None,
            move_tol: None,
        },
    );
    seen.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pool: Vec<Vec<Vec<bool>>> = seen.into_iter().take(opts.candidates.max(1)).map(|c| c.1).collect();
    pool.push(priority_list(inst));
    pool.push(vec![vec![true; t_len]; inst.units.len()]);
    let mut best: Option<UcSchedule> = None;
    let mut last_err = None;
    for on in pool {
        let attempt = repair(inst, on).and_then(|on| fixed_commitment_dispatch(inst, &on));
        match attempt {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.cost < b.cost) {
                    best = Some(s);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    if inst.units.len() * t_len <= opts.polish_limit {
        best = best.map(|b| polish(inst, b, 3));
    }
    let mut sched = match best {
        Some(s) => s,
        None => return Err(last_err.unwrap_or_else(|| GridError::Infeasible("no commitment recovered".into()))),
    };
    sched.dual_bound = Some(bound);
    sched.gap = Some((sched.cost - bound) / sched.cost.abs().max(1e-12));
    sched.prices = sg.lambda;
    sched.dual_trace = sg.trace;
    sched.iterations = sg.iterations;
    Ok(sched)
}

/// Exact optimum by enumerating every commitment (`units × periods ≤ 16`).
pub fn uc_bruteforce(inst: &UcInstance) -> Result<UcSchedule> {
    inst.validate()?;
    let (n_units, t_len) = (inst.units.len(), inst.periods());
    let bits = n_units * t_len;
    if bits > 16 {
        return Err(GridError::TooLarge(format!(
            "{n_units} units × {t_len} periods exceeds the enumeration limit of 16"
        )));
    }
    let mut best: Option<UcSchedule> = None;
    for mask in 0u32..(1 << bits) {
        let on: Vec<Vec<bool>> = (0..n_units)
            .map(|m| (0..t_len).map(|t| mask >> (m * t_len + t) & 1 == 1).collect())
            .collect();
        if !inst.units.iter().zip(&on).all(|(u, row)| u.respects_min_times(row)) {
            continue;
        }
        let coverable = (0..t_len).all(|t| {
            let (lo, hi) = (0..n_units).filter(|&m| on[m][t]).fold((0.0, 0.0), |(lo, hi), m| {
                (lo + inst.units[m].p_min, hi + inst.units[m].p_max)
            });
            lo <= inst.demand[t] + 1e-9 && inst.demand[t] <= hi + 1e-9
        });
        if !coverable {
            continue;
        }
        let Ok(s) = fixed_commitment_dispatch(inst, &on) else {
            continue;
        };
        if best.as_ref().is_none_or(|b| s.cost < b.cost - 1e-12) {
            best = Some(s);
        }
    }
    best.ok_or_else(|| GridError::Infeasible("no feasible commitment".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_instance() -> UcInstance {
        let mut u = UnitSpec::new(CostFunction::quadratic(0.0, 1.0, 0.0), 1.0, 2.0);
        u.startup_cost = 10.0;
        UcInstance {
            demand: vec![0.0, 2.0],
            units: vec![u],
        }
    }

    #[test]
    fn hand_enumeration() {
        let inst = hand_instance();
        let b = uc_bruteforce(&inst).unwrap();
        assert_eq!(b.on, vec![vec![false, true]]);
        assert!((b.cost - 12.0).abs() < 1e-9);
        let l = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
        assert_eq!(l.on, b.on);
        assert!((l.cost - 12.0).abs() < 1e-9);
        assert!(l.dual_bound.unwrap() <= l.cost + 1e-9);
    }

    #[test]
    fn min_up_forbids_short_blocks() {
        let mut u = UnitSpec::new(CostFunction::quadratic(0.0, 1.0, 0.0), 0.0, 1.0);
        u.min_up = 2;
        assert!(!u.respects_min_times(&[true, false, true]));
        assert!(u.respects_min_times(&[true, true, false]));
        assert!(u.respects_min_times(&[false, false, true]));
        u.initially_on = true;
        assert!(u.respects_min_times(&[true, false, true]));
        u.min_down = 2;
        assert!(!u.respects_min_times(&[true, false, true]));
    }

    #[test]
    fn cheap_unit_suffices() {
        let cheap = UnitSpec::new(CostFunction::quadratic(0.1, 5.0, 0.0), 0.5, 5.0);
        let mut dear = UnitSpec::new(CostFunction::quadratic(0.1, 50.0, 0.0), 0.5, 5.0);
        dear.startup_cost = 5.0;
        let inst = UcInstance {
            demand: vec![3.0; 4],
            units: vec![cheap, dear],
        };
        let s = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
        assert!(s.on[1].iter().all(|&u| !u));
        assert!(s.gap.unwrap().abs() < 1e-6, "gap {:?}", s.gap);
    }

    #[test]
    fn shortfall_names_periods() {
        let u = UnitSpec::new(CostFunction::quadratic(0.0, 1.0, 0.0), 0.0, 1.0);
        let inst = UcInstance {
            demand: vec![0.5, 2.0, 0.5, 3.0],
            units: vec![u],
        };
        match uc_lagrangian(&inst, &UcOptions::default()) {
            Err(GridError::Infeasible(msg)) => assert!(msg.contains("[1, 3]"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn enumeration_guard() {
        let u = UnitSpec::new(CostFunction::quadratic(0.0, 1.0, 0.0), 0.0, 1.0);
        let inst = UcInstance {
            demand: vec![0.5; 9],
            units: vec![u.clone(), u],
        };
        assert!(matches!(uc_bruteforce(&inst), Err(GridError::TooLarge(_))));
    }

    #[test]
    fn ramps_restrict_output() {
        let mut u = UnitSpec::new(CostFunction::quadratic(0.0, 1.0, 0.0), 0.0, 4.0);
        u.ramp_up = Some(1.0);
        u.initially_on = true;
        u.initial_output = 1.0;
        let mut peak = UnitSpec::new(CostFunction::quadratic(0.0, 10.0, 0.0), 0.0, 4.0);
        peak.min_up = 1;
        let inst = UcInstance {
            demand: vec![1.0, 3.0, 3.0],
            units: vec![u, peak],
        };
        let b = uc_bruteforce(&inst).unwrap();
        assert!((b.output[0][1] - 2.0).abs() < 1e-7 && (b.output[0][2] - 3.0).abs() < 1e-7);
        assert!((b.output[1][1] - 1.0).abs() < 1e-7);
        let l = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
        assert!((l.cost - b.cost).abs() < 1e-6);
    }
}
