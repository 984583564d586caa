//! Flexible-load scheduling: multi-user demand response, load curtailment
//! and electric-vehicle valley filling.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::optim::{solve_qp, QpBuilder, QpOptions, QpStatus};

/// A per-slot quantity given either as one number for every slot or as a
/// full series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerSlot {
    Scalar(f64),
    Series(Vec<f64>),
}

impl PerSlot {
    pub fn expand(&self, t_len: usize, what: &'static str) -> Result<Vec<f64>> {
        match self {
            PerSlot::Scalar(v) => Ok(vec![*v; t_len]),
            PerSlot::Series(v) if v.len() == t_len => Ok(v.clone()),
            PerSlot::Series(v) => Err(GridError::DimensionMismatch {
                what,
                expected: t_len,
                got: v.len(),
            }),
        }
    }
}

fn qp_opts() -> QpOptions {
    QpOptions {
        tol: 1e-11,
        max_iter: 300,
    }
}

/// Euclidean projection of `v` onto `{lo ≤ x ≤ hi, Σ x = total}`.
pub fn project_box_sum(v: &[f64], lo: &[f64], hi: &[f64], total: f64) -> Result<Vec<f64>> {
    let (s_lo, s_hi): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
    let slack = 1e-9 * (1.0 + total.abs());
    if lo.iter().zip(hi).any(|(l, h)| l > h) || total < s_lo - slack || total > s_hi + slack {
        return Err(GridError::Infeasible(format!(
            "energy {total} outside [{s_lo}, {s_hi}]"
        )));
    }
    let clamp = |nu: f64| -> Vec<f64> { (0..v.len()).map(|t| (v[t] - nu).clamp(lo[t], hi[t])).collect() };
    let sum = |x: &[f64]| x.iter().sum::<f64>();
    let mut a = (0..v.len()).map(|t| v[t] - hi[t]).fold(f64::INFINITY, f64::min);
    let mut b = (0..v.len()).map(|t| v[t] - lo[t]).fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if sum(&clamp(mid)) > total {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
    }
    let mut nu = 0.5 * (a + b);
    // Exact multiplier on the free set.
    let x = clamp(nu);
    let free: Vec<usize> = (0..v.len()).filter(|&t| x[t] > lo[t] && x[t] < hi[t]).collect();
    if !free.is_empty() {
        let fixed: f64 = (0..v.len()).filter(|t| !free.contains(t)).map(|t| x[t]).sum();
        let cand = (free.iter().map(|&t| v[t]).sum::<f64>() - (total - fixed)) / free.len() as f64;
        if (sum(&clamp(cand)) - total).abs() <= (sum(&x) - total).abs() {
            nu = cand;
        }
    }
    let mut x = clamp(nu);
    let mut residual = total - sum(&x);
    for t in 0..x.len() {
        if residual == 0.0 {
            break;
        }
        let room = if residual > 0.0 { hi[t] - x[t] } else { lo[t] - x[t] };
        let d = if residual > 0.0 {
            residual.min(room)
        } else {
            residual.max(room)
        };
        x[t] += d;
        residual -= d;
    }
    Ok(x)
}

/// Quadratic utility `U(p) = −w Σ_t (p_t − target_t)²` over a slot-bounded
/// set with an optional total-energy requirement or cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Appliance {
    pub weight: f64,
    pub target: PerSlot,
    #[serde(default = "zero_slot")]
    pub p_min: PerSlot,
    pub p_max: PerSlot,
    #[serde(default)]
    pub energy: Option<f64>,
    #[serde(default)]
    pub energy_max: Option<f64>,
}

fn zero_slot() -> PerSlot {
    PerSlot::Scalar(0.0)
}

struct ApplianceData {
    weight: f64,
    target: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    energy: Option<f64>,
    energy_max: Option<f64>,
}

impl ApplianceData {
    fn new(a: &Appliance, t_len: usize) -> Result<Self> {
        let d = Self {
            weight: a.weight,
            target: a.target.expand(t_len, "appliance target")?,
            lo: a.p_min.expand(t_len, "appliance p_min")?,
            hi: a.p_max.expand(t_len, "appliance p_max")?,
            energy: a.energy,
            energy_max: a.energy_max,
        };
        if !(d.weight >= 0.0) {
            return Err(GridError::InvalidInput(format!("utility weight {}", d.weight)));
        }
        let (s_lo, s_hi): (f64, f64) = (d.lo.iter().sum(), d.hi.iter().sum());
        let bad = d.lo.iter().zip(&d.hi).any(|(l, h)| l > h)
            || d.energy.is_some_and(|e| e < s_lo - 1e-9 || e > s_hi + 1e-9)
            || d.energy_max.is_some_and(|e| e < s_lo - 1e-9);
        if bad {
            return Err(GridError::Infeasible("appliance constraints admit no schedule".into()));
        }
        Ok(d)
    }

    fn utility(&self, p: &[f64]) -> f64 {
        -self.weight * p.iter().zip(&self.target).map(|(x, t)| (x - t).powi(2)).sum::<f64>()
    }

    /// Maximizes `U(p) − λ·p` over the feasible set.
    fn respond(&self, prices: &[f64]) -> Result<Vec<f64>> {
        let t_len = prices.len();
        if self.weight > 0.0 {
            let v: Vec<f64> = (0..t_len)
                .map(|t| self.target[t] - prices[t] / (2.0 * self.weight))
                .collect();
            if let Some(e) = self.energy {
                return project_box_sum(&v, &self.lo, &self.hi, e);
            }
            let x: Vec<f64> = (0..t_len).map(|t| v[t].clamp(self.lo[t], self.hi[t])).collect();
            return match self.energy_max {
                Some(e) if x.iter().sum::<f64>() > e => project_box_sum(&v, &self.lo, &self.hi, e),
                _ => Ok(x),
            };
        }
        // Linear utility: a small LP.
        let mut qp = QpBuilder::new(t_len);
        for t in 0..t_len {
            qp.lin(t, prices[t]);
            qp.bounds(t, self.lo[t], self.hi[t]);
        }
        let all: Vec<(usize, f64)> = (0..t_len).map(|t| (t, 1.0)).collect();
        if let Some(e) = self.energy {
            qp.eq(all.clone(), e);
        }
        if let Some(e) = self.energy_max {
            qp.le(all, e);
        }
        let sol = solve_qp(&qp.build(), qp_opts())?;
        if sol.status != QpStatus::Optimal {
            return Err(GridError::Infeasible("appliance subproblem".into()));
        }
        Ok(sol.x.iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrUser {
    pub appliances: Vec<Appliance>,
}

/// Supplier cost `C(s) = c2 s² + c1 s` in every period, with supply bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Supplier {
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub s_min: f64,
    #[serde(default)]
    pub s_max: Option<f64>,
}

impl Supplier {
    fn cost(&self, s: f64) -> f64 {
        self.c2 * s * s + self.c1 * s
    }

    fn upper(&self) -> f64 {
        self.s_max.unwrap_or(f64::INFINITY)
    }

    /// Maximizes `λ s − C(s)` over the supply bounds.
    fn respond(&self, price: f64) -> f64 {
        if self.c2 > 0.0 {
            ((price - self.c1) / (2.0 * self.c2)).clamp(self.s_min, self.upper())
        } else if price > self.c1 {
            self.upper()
        } else {
            self.s_min
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrInstance {
    pub periods: usize,
    pub supplier: Supplier,
    pub users: Vec<DrUser>,
}

impl DrInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GridError::MalformedJson(e.to_string()))
    }

    fn data(&self) -> Result<Vec<Vec<ApplianceData>>> {
        if self.periods == 0 {
            return Err(GridError::InvalidInput("no periods".into()));
        }
        let s = &self.supplier;
        if !(s.c2 >= 0.0) || s.s_min > s.upper() {
            return Err(GridError::InvalidInput(
                "supplier cost must be convex with s_min ≤ s_max".into(),
            ));
        }
        self.users
            .iter()
            .map(|u| {
                u.appliances
                    .iter()
                    .map(|a| ApplianceData::new(a, self.periods))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrMode {
    Central,
    Dual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrIterate {
    pub iteration: usize,
    pub prices: Vec<f64>,
    /// Consumption minus supply per period.
    pub excess: Vec<f64>,
    pub dual_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrSolution {
    pub mode: DrMode,
    /// `consumption[user][appliance][t]`
    pub consumption: Vec<Vec<Vec<f64>>>,
    pub supply: Vec<f64>,
    pub prices: Vec<f64>,
    pub welfare: f64,
    /// Dual function value at the final prices (dual mode).
    pub dual_value: Option<f64>,
    pub gap: Option<f64>,
    /// Largest per-period mismatch between consumption and supply.
    pub imbalance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub messages: usize,
    pub trace: Vec<DrIterate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrOptions {
    pub max_iter: usize,
    /// Price step; defaults to the inverse curvature bound of the dual.
    pub step: Option<f64>,
    pub price_tol: f64,
}

impl Default for DrOptions {
    fn default() -> Self {
        Self {
            max_iter: 20_000,
            step: None,
            price_tol: 1e-6,
        }
    }
}

/// Participants of the distributed price exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agent {
    Coordinator,
    Supplier,
    User(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Prices(Vec<f64>),
    /// Aggregate consumption of a user and its local optimal value.
    Consumption {
        profile: Vec<f64>,
        surplus: f64,
    },
    Supply {
        profile: Vec<f64>,
        profit: f64,
    },
}

/// In-process message queues, one per agent.
#[derive(Debug, Default)]
pub struct Mailbox {
    queues: HashMap<Agent, VecDeque<(Agent, Message)>>,
    delivered: usize,
}

impl Mailbox {
    pub fn send(&mut self, from: Agent, to: Agent, msg: Message) {
        self.queues.entry(to).or_default().push_back((from, msg));
        self.delivered += 1;
    }

    pub fn receive(&mut self, agent: Agent) -> Option<(Agent, Message)> {
        self.queues.get_mut(&agent)?.pop_front()
    }

    pub fn delivered(&self) -> usize {
        self.delivered
    }
}

struct UserAgent<'a> {
    id: usize,
    appliances: &'a [ApplianceData],
}

impl UserAgent<'_> {
    fn schedules(&self, prices: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.appliances.iter().map(|a| a.respond(prices)).collect()
    }

    fn handle(&self, mailbox: &mut Mailbox) -> Result<()> {
        while let Some((from, msg)) = mailbox.receive(Agent::User(self.id)) {
            if let Message::Prices(prices) = msg {
                let plans = self.schedules(&prices)?;
                let mut profile = vec![0.0; prices.len()];
                let mut surplus = 0.0;
                for (a, p) in self.appliances.iter().zip(&plans) {
                    surplus += a.utility(p) - p.iter().zip(&prices).map(|(x, l)| x * l).sum::<f64>();
                    profile.iter_mut().zip(p).for_each(|(acc, x)| *acc += x);
                }
                mailbox.send(Agent::User(self.id), from, Message::Consumption { profile, surplus });
            }
        }
        Ok(())
    }
}

fn supplier_handle(s: &Supplier, mailbox: &mut Mailbox) {
    while let Some((from, msg)) = mailbox.receive(Agent::Supplier) {
        if let Message::Prices(prices) = msg {
            let profile: Vec<f64> = prices.iter().map(|&l| s.respond(l)).collect();
            let profit = profile.iter().zip(&prices).map(|(x, l)| l * x - s.cost(*x)).sum();
            mailbox.send(Agent::Supplier, from, Message::Supply { profile, profit });
        }
    }
}

fn welfare(inst: &DrInstance, data: &[Vec<ApplianceData>], cons: &[Vec<Vec<f64>>], supply: &[f64]) -> f64 {
    let u: f64 = data
        .iter()
        .zip(cons)
        .flat_map(|(apps, plans)| apps.iter().zip(plans).map(|(a, p)| a.utility(p)))
        .sum();
    u - supply.iter().map(|&s| inst.supplier.cost(s)).sum::<f64>()
}

fn dr_central(inst: &DrInstance, data: &[Vec<ApplianceData>]) -> Result<DrSolution> {
    let t_len = inst.periods;
    let n_app: usize = data.iter().map(|u| u.len()).sum();
    let var = |k: usize, t: usize| k * t_len + t;
    let s_var = |t: usize| n_app * t_len + t;
    let mut qp = QpBuilder::new(n_app * t_len + t_len);
    let mut k = 0;
    for apps in data {
        for a in apps {
            for t in 0..t_len {
                qp.quad(var(k, t), var(k, t), a.weight)
                    .lin(var(k, t), -2.0 * a.weight * a.target[t]);
                qp.bounds(var(k, t), a.lo[t], a.hi[t]);
            }
            let all: Vec<(usize, f64)> = (0..t_len).map(|t| (var(k, t), 1.0)).collect();
            if let Some(e) = a.energy {
                qp.eq(all.clone(), e);
            }
            if let Some(e) = a.energy_max {
                qp.le(all, e);
            }
            k += 1;
        }
    }
    let sup = &inst.supplier;
    let mut rows = Vec::with_capacity(t_len);
    for t in 0..t_len {
        qp.quad(s_var(t), s_var(t), sup.c2).lin(s_var(t), sup.c1);
        qp.bounds(s_var(t), sup.s_min, sup.upper());
        let mut row = vec![(s_var(t), 1.0)];
        row.extend((0..n_app).map(|k| (var(k, t), -1.0)));
        rows.push(qp.eq(row, 0.0));
    }
    let sol = solve_qp(&qp.build(), qp_opts())?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(GridError::Infeasible("demand response program".into())),
        QpStatus::MaxIter => return Err(GridError::Singular("demand response QP did not converge".into())),
    }
    let mut consumption = Vec::with_capacity(data.len());
    let mut k = 0;
    for apps in data {
        let mut plans = Vec::with_capacity(apps.len());
        for _ in apps {
            plans.push((0..t_len).map(|t| sol.x[var(k, t)]).collect::<Vec<f64>>());
            k += 1;
        }
        consumption.push(plans);
    }
    let supply: Vec<f64> = (0..t_len).map(|t| sol.x[s_var(t)]).collect();
    let w = welfare(inst, data, &consumption, &supply);
    Ok(DrSolution {
        mode: DrMode::Central,
        imbalance: sol.eq_residual,
        consumption,
        supply,
        prices: rows.iter().map(|&r| sol.eq_duals[r]).collect(),
        welfare: w,
        dual_value: None,
        gap: None,
        iterations: sol.iterations,
        converged: true,
        messages: 0,
        trace: Vec::new(),
    })
}

fn dr_dual(inst: &DrInstance, data: &[Vec<ApplianceData>], opts: &DrOptions) -> Result<DrSolution> {
    let t_len = inst.periods;
    let sup = &inst.supplier;
    if opts.max_iter == 0 {
        return Err(GridError::InvalidInput("iteration budget must be positive".into()));
    }
    if sup.c2 == 0.0 && sup.s_max.is_none() {
        return Err(GridError::InvalidInput(
            "price coordination needs a strictly convex supply cost or a finite s_max".into(),
        ));
    }
    let curvature: f64 = data
        .iter()
        .flatten()
        .map(|a| if a.weight > 0.0 { 1.0 / (2.0 * a.weight) } else { 0.0 })
        .sum::<f64>()
        + if sup.c2 > 0.0 { 1.0 / (2.0 * sup.c2) } else { 0.0 };
    let step = opts.step.unwrap_or(1.0 / curvature.max(1e-12));
    let agents: Vec<UserAgent> = data
        .iter()
        .enumerate()
        .map(|(id, apps)| UserAgent { id, appliances: apps })
        .collect();
    let mut mailbox = Mailbox::default();
    let mut prices = vec![sup.c1.max(0.0); t_len];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut dual_value = f64::NAN;
    let mut best = (f64::INFINITY, prices.clone());
    for k in 0..opts.max_iter {
        iterations = k + 1;
        for a in &agents {
            mailbox.send(Agent::Coordinator, Agent::User(a.id), Message::Prices(prices.clone()));
        }
        mailbox.send(Agent::Coordinator, Agent::Supplier, Message::Prices(prices.clone()));
        for a in &agents {
            a.handle(&mut mailbox)?;
        }
        supplier_handle(sup, &mut mailbox);
        let mut excess = vec![0.0; t_len];
        dual_value = 0.0;
        while let Some((_, msg)) = mailbox.receive(Agent::Coordinator) {
            match msg {
                Message::Consumption { profile, surplus } => {
                    excess.iter_mut().zip(&profile).for_each(|(e, p)| *e += p);
                    dual_value += surplus;
                }
                Message::Supply { profile, profit } => {
                    excess.iter_mut().zip(&profile).for_each(|(e, s)| *e -= s);
                    dual_value += profit;
                }
                Message::Prices(_) => {}
            }
        }
        if dual_value < best.0 {
            best = (dual_value, prices.clone());
        }
        let next: Vec<f64> = prices.iter().zip(&excess).map(|(l, e)| l + step * e).collect();
        let moved = next.iter().zip(&prices).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        trace.push(DrIterate {
            iteration: k,
            prices: prices.clone(),
            excess,
            dual_value,
        });
        if moved < opts.price_tol {
            converged = true;
            break;
        }
        prices = next;
    }
    if !converged {
        (dual_value, prices) = best;
    }
    let consumption: Vec<Vec<Vec<f64>>> = agents.iter().map(|a| a.schedules(&prices)).collect::<Result<_>>()?;
    let supply: Vec<f64> = prices.iter().map(|&l| sup.respond(l)).collect();
    let imbalance = (0..t_len)
        .map(|t| (consumption.iter().flatten().map(|p| p[t]).sum::<f64>() - supply[t]).abs())
        .fold(0.0, f64::max);
    let w = welfare(inst, data, &consumption, &supply);
    Ok(DrSolution {
        mode: DrMode::Dual,
        consumption,
        supply,
        prices,
        welfare: w,
        dual_value: Some(dual_value),
        gap: Some(dual_value - w),
        imbalance,
        iterations,
        converged,
        messages: mailbox.delivered(),
        trace,
    })
}

/// Welfare-maximizing schedules, either by one central QP or by price
/// coordination where each user optimizes its own appliances privately.
pub fn dr_solve(inst: &DrInstance, mode: DrMode, opts: &DrOptions) -> Result<DrSolution> {
    let data = inst.data()?;
    match mode {
        DrMode::Central => dr_central(inst, &data),
        DrMode::Dual => dr_dual(inst, &data, opts),
    }
}

/// A user asked to shed load; discomfort is `weight · c²` for a cut `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurtailUser {
    pub weight: f64,
    pub max_cut: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curtailment {
    pub cuts: Vec<f64>,
    /// Common marginal discomfort.
    pub price: f64,
    pub discomfort: f64,
}

/// Splits a deficit among users to minimize total discomfort.
pub fn curtail_solve(users: &[CurtailUser], deficit: f64) -> Result<Curtailment> {
    let cap: f64 = users.iter().map(|u| u.max_cut).sum();
    if users.iter().any(|u| !(u.weight > 0.0) || !(u.max_cut >= 0.0)) {
        return Err(GridError::InvalidInput("curtailment weights must be positive".into()));
    }
    if !(deficit >= 0.0 && deficit <= cap + 1e-12) {
        return Err(GridError::Infeasible(format!("deficit {deficit} outside [0, {cap}]")));
    }
    let inst = DrInstance {
        periods: 1,
        supplier: Supplier {
            c2: 0.0,
            c1: 0.0,
            s_min: deficit,
            s_max: Some(deficit),
        },
        users: users
            .iter()
            .map(|u| DrUser {
                appliances: vec![Appliance {
                    weight: u.weight,
                    target: PerSlot::Scalar(0.0),
                    p_min: PerSlot::Scalar(0.0),
                    p_max: PerSlot::Scalar(u.max_cut),
                    energy: None,
                    energy_max: None,
                }],
            })
            .collect(),
    };
    let sol = dr_solve(&inst, DrMode::Central, &DrOptions::default())?;
    let cuts: Vec<f64> = sol.consumption.iter().map(|u| u[0][0]).collect();
    Ok(Curtailment {
        discomfort: users.iter().zip(&cuts).map(|(u, c)| u.weight * c * c).sum(),
        cuts,
        price: -sol.prices[0],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Vehicle {
    #[serde(default = "zero_slot")]
    pub r_min: PerSlot,
    pub r_max: PerSlot,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PevFleet {
    pub base: Vec<f64>,
    pub vehicles: Vec<Vehicle>,
}

impl PevFleet {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GridError::MalformedJson(e.to_string()))
    }

    fn bounds(&self) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let t_len = self.base.len();
        if t_len == 0 {
            return Err(GridError::InvalidInput("empty base demand".into()));
        }
        self.vehicles
            .iter()
            .enumerate()
            .map(|(n, v)| {
                let lo = v.r_min.expand(t_len, "vehicle r_min")?;
                let hi = v.r_max.expand(t_len, "vehicle r_max")?;
                let (s_lo, s_hi): (f64, f64) = (lo.iter().sum(), hi.iter().sum());
                let tol = 1e-9 * (1.0 + v.energy.abs());
                if lo.iter().zip(&hi).any(|(l, h)| l > h) || v.energy < s_lo - tol || v.energy > s_hi + tol {
                    return Err(GridError::Infeasible(format!(
                        "vehicle {n} cannot draw {} within its rate limits [{s_lo}, {s_hi}]",
                        v.energy
                    )));
                }
                Ok((lo, hi))
            })
            .collect()
    }

    pub fn aggregate(&self, profiles: &[Vec<f64>]) -> Vec<f64> {
        let mut total = self.base.clone();
        for r in profiles {
            total.iter_mut().zip(r).for_each(|(a, x)| *a += x);
        }
        total
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PevIterate {
    pub iteration: usize,
    /// Price signal, equal to the aggregate load it was computed from.
    pub price: Vec<f64>,
    pub objective: f64,
    /// Largest per-slot change of any vehicle profile.
    pub change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargingProfiles {
    pub profiles: Vec<Vec<f64>>,
    pub aggregate: Vec<f64>,
    /// `Σ_t L(t)²`
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<PevIterate>,
}

fn sum_squares(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Valley filling by one QP over all vehicles.
pub fn pev_central(fleet: &PevFleet) -> Result<ChargingProfiles> {
    let bounds = fleet.bounds()?;
    let (t_len, n) = (fleet.base.len(), fleet.vehicles.len());
    let var = |v: usize, t: usize| v * t_len + t;
    let mut qp = QpBuilder::new(n * t_len);
    for t in 0..t_len {
        for a in 0..n {
            qp.lin(var(a, t), 2.0 * fleet.base[t]);
            qp.quad(var(a, t), var(a, t), 1.0);
            for b in a + 1..n {
                qp.quad(var(a, t), var(b, t), 2.0);
            }
        }
    }
    for (v, (lo, hi)) in bounds.iter().enumerate() {
        for t in 0..t_len {
            qp.bounds(var(v, t), lo[t], hi[t]);
        }
        qp.eq((0..t_len).map(|t| (var(v, t), 1.0)).collect(), fleet.vehicles[v].energy);
    }
    let profiles: Vec<Vec<f64>> = if n == 0 {
        Vec::new()
    } else {
        let sol = solve_qp(&qp.build(), qp_opts())?;
        if sol.status != QpStatus::Optimal {
            return Err(GridError::Infeasible("charging program".into()));
        }
        // Snap onto each vehicle's constraint set.
        bounds
            .iter()
            .enumerate()
            .map(|(v, (lo, hi))| {
                let raw: Vec<f64> = (0..t_len).map(|t| sol.x[var(v, t)]).collect();
                project_box_sum(&raw, lo, hi, fleet.vehicles[v].energy)
            })
            .collect::<Result<_>>()?
    };
    let aggregate = fleet.aggregate(&profiles);
    Ok(ChargingProfiles {
        objective: sum_squares(&aggregate),
        aggregate,
        profiles,
        iterations: 1,
        converged: true,
        trace: Vec::new(),
    })
}

/// Valley filling by price broadcasting: every vehicle takes a proximal
/// step against the current price, then the price is reset to the
/// resulting aggregate load.
pub fn pev_distributed(fleet: &PevFleet, max_iter: usize, tol: f64) -> Result<ChargingProfiles> {
    let bounds = fleet.bounds()?;
    let (t_len, n) = (fleet.base.len(), fleet.vehicles.len());
    let prox = n.max(1) as f64;
    let mut profiles = vec![vec![0.0; t_len]; n];
    let mut price = fleet.base.clone();
    // p⁰ = D comes from the infeasible start r⁰ = 0 and is not traced.
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=max_iter {
        iterations = k;
        let mut change = 0.0_f64;
        let mut next = Vec::with_capacity(n);
        for (v, (lo, hi)) in bounds.iter().enumerate() {
            // argmin p·r + (N/2)‖r − r_k‖² over the vehicle's set
            let target: Vec<f64> = (0..t_len).map(|t| profiles[v][t] - price[t] / prox).collect();
            let r = project_box_sum(&target, lo, hi, fleet.vehicles[v].energy)?;
            change = change.max(
                r.iter()
                    .zip(&profiles[v])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max),
            );
            next.push(r);
        }
        profiles = next;
        price = fleet.aggregate(&profiles);
        trace.push(PevIterate {
            iteration: k,
            price: price.clone(),
            objective: sum_squares(&price),
            change,
        });
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(ChargingProfiles {
        objective: sum_squares(&price),
        aggregate: price,
        profiles,
        iterations,
        converged,
        trace,
    })
}
