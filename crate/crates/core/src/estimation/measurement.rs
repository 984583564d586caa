//! Meter readings, their measurement functions `h(v)` and Jacobians.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::netmodel::{
    branch_flows, build_admittance, complex_injections, flow_sensitivity, injection_jacobian, AdmittanceModel,
    ComplexState, GridCase,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasKind {
    Vmag,
    Pinj,
    Qinj,
    Pflow,
    Qflow,
    PhasorV,
    PhasorIline,
}

impl MeasKind {
    fn at_bus(self) -> bool {
        matches!(
            self,
            MeasKind::Vmag | MeasKind::Pinj | MeasKind::Qinj | MeasKind::PhasorV
        )
    }

    /// Number of real rows the reading contributes.
    pub fn rows(self) -> usize {
        match self {
            MeasKind::PhasorV | MeasKind::PhasorIline => 2,
            _ => 1,
        }
    }

    /// Whether the reading fits the linear angle-only model.
    pub fn is_dc(self) -> bool {
        matches!(self, MeasKind::Pinj | MeasKind::Pflow)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    #[default]
    From,
    To,
}

/// Bus locations use bus ids; branch locations use the branch position in the case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Location {
    Bus(usize),
    Branch { index: usize, end: End },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MeasPoint {
    pub kind: MeasKind,
    pub location: Location,
}

impl MeasPoint {
    pub fn bus(kind: MeasKind, id: usize) -> Self {
        Self {
            kind,
            location: Location::Bus(id),
        }
    }

    pub fn branch(kind: MeasKind, index: usize, end: End) -> Self {
        Self {
            kind,
            location: Location::Branch { index, end },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeasValue {
    Real(f64),
    Phasor([f64; 2]),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasurement", into = "RawMeasurement")]
pub struct Measurement {
    pub kind: MeasKind,
    pub location: Location,
    pub value: MeasValue,
    pub sigma: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasurement {
    kind: MeasKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bus: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    branch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end: Option<End>,
    value: MeasValue,
    sigma: f64,
}

impl TryFrom<RawMeasurement> for Measurement {
    type Error = GridError;

    fn try_from(r: RawMeasurement) -> Result<Self> {
        let location = match (r.kind.at_bus(), r.bus, r.branch) {
            (true, Some(b), None) => Location::Bus(b),
            (false, None, Some(l)) => Location::Branch {
                index: l,
                end: r.end.unwrap_or_default(),
            },
            _ => {
                return Err(GridError::InvalidLocation(format!(
                    "{:?} needs exactly one {} field",
                    r.kind,
                    if r.kind.at_bus() { "bus" } else { "branch" }
                )))
            }
        };
        let m = Measurement {
            kind: r.kind,
            location,
            value: r.value,
            sigma: r.sigma,
        };
        m.check_shape()?;
        Ok(m)
    }
}

impl From<Measurement> for RawMeasurement {
    fn from(m: Measurement) -> Self {
        let (bus, branch, end) = match m.location {
            Location::Bus(b) => (Some(b), None, None),
            Location::Branch { index, end } => (None, Some(index), Some(end)),
        };
        RawMeasurement {
            kind: m.kind,
            bus,
            branch,
            end,
            value: m.value,
            sigma: m.sigma,
        }
    }
}

impl Measurement {
    pub fn point(&self) -> MeasPoint {
        MeasPoint {
            kind: self.kind,
            location: self.location,
        }
    }

    fn check_shape(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(GridError::InvalidInput(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        let ok = matches!(
            (self.kind.rows(), self.value),
            (1, MeasValue::Real(_)) | (2, MeasValue::Phasor(_))
        );
        if !ok {
            return Err(GridError::InvalidInput(format!(
                "value shape does not match {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    fn values(&self) -> Vec<f64> {
        match self.value {
            MeasValue::Real(v) => vec![v],
            MeasValue::Phasor([re, im]) => vec![re, im],
        }
    }
}

/// A batch of readings. Rows of the stacked real vector follow measurement
/// order, with phasors contributing real then imaginary parts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeasurementSet {
    pub measurements: Vec<Measurement>,
}

impl MeasurementSet {
    pub fn new(measurements: Vec<Measurement>) -> Self {
        Self { measurements }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| GridError::MalformedJson(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("measurements serialize")
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    /// Number of real rows.
    pub fn n_rows(&self) -> usize {
        self.measurements.iter().map(|m| m.kind.rows()).sum()
    }

    pub fn z(&self) -> DVector<f64> {
        DVector::from_iterator(self.n_rows(), self.measurements.iter().flat_map(|m| m.values()))
    }

    pub fn sigmas(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_rows(),
            self.measurements
                .iter()
                .flat_map(|m| std::iter::repeat_n(m.sigma, m.kind.rows())),
        )
    }

    /// Index of the measurement owning each real row.
    pub fn row_owner(&self) -> Vec<usize> {
        self.measurements
            .iter()
            .enumerate()
            .flat_map(|(i, m)| std::iter::repeat_n(i, m.kind.rows()))
            .collect()
    }

    pub fn validate(&self, case: &GridCase) -> Result<()> {
        for m in &self.measurements {
            m.check_shape()?;
            resolve(case, m.point())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Resolved {
    Bus(usize),
    Branch(usize, bool),
}

pub(crate) fn resolve(case: &GridCase, p: MeasPoint) -> Result<Resolved> {
    match (p.kind.at_bus(), p.location) {
        (true, Location::Bus(id)) => case
            .bus_index(id)
            .map(Resolved::Bus)
            .map_err(|_| GridError::InvalidLocation(format!("{:?} at unknown bus {id}", p.kind))),
        (false, Location::Branch { index, end }) if index < case.n_branch() => {
            Ok(Resolved::Branch(index, end == End::From))
        }
        (false, Location::Branch { index, .. }) => Err(GridError::InvalidLocation(format!(
            "{:?} on branch {index}, case has {}",
            p.kind,
            case.n_branch()
        ))),
        _ => Err(GridError::InvalidLocation(format!(
            "{:?} placed at {:?}",
            p.kind, p.location
        ))),
    }
}

/// Evaluates `h(v)` for a list of measurement points.
pub fn measurement_values(
    case: &GridCase,
    model: &AdmittanceModel,
    points: &[MeasPoint],
    state: &ComplexState,
) -> Result<DVector<f64>> {
    let v = state.phasors();
    let s = complex_injections(model, &v);
    let flows = branch_flows(model, state)?;
    let mut out = Vec::new();
    for &p in points {
        match (p.kind, resolve(case, p)?) {
            (MeasKind::Vmag, Resolved::Bus(i)) => out.push(v[i].norm()),
            (MeasKind::Pinj, Resolved::Bus(i)) => out.push(s[i].re),
            (MeasKind::Qinj, Resolved::Bus(i)) => out.push(s[i].im),
            (MeasKind::PhasorV, Resolved::Bus(i)) => out.extend([v[i].re, v[i].im]),
            (kind, Resolved::Branch(l, from)) => {
                let f = flows[l];
                let (s, i) = if from { (f.s_from, f.i_from) } else { (f.s_to, f.i_to) };
                match kind {
                    MeasKind::Pflow => out.push(s.re),
                    MeasKind::Qflow => out.push(s.im),
                    _ => out.extend([i.re, i.im]),
                }
            }
            _ => unreachable!("location kinds checked by resolve"),
        }
    }
    Ok(DVector::from_vec(out))
}

/// Layout of the polar estimation state: angles of every non-slack bus
/// followed by all magnitudes.
#[derive(Debug, Clone)]
pub(crate) struct PolarLayout {
    pub slack: usize,
    pub n_bus: usize,
}

impl PolarLayout {
    pub fn new(case: &GridCase) -> Self {
        Self {
            slack: case.slack(),
            n_bus: case.n_bus(),
        }
    }

    pub fn len(&self) -> usize {
        2 * self.n_bus - 1
    }

    pub fn angle_col(&self, bus: usize) -> Option<usize> {
        match bus.cmp(&self.slack) {
            std::cmp::Ordering::Less => Some(bus),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(bus - 1),
        }
    }

    pub fn mag_col(&self, bus: usize) -> usize {
        self.n_bus - 1 + bus
    }

    pub fn pack(&self, state: &ComplexState) -> DVector<f64> {
        let (vm, va) = (state.magnitudes(), state.angles());
        let mut x = DVector::zeros(self.len());
        for i in 0..self.n_bus {
            if let Some(c) = self.angle_col(i) {
                x[c] = va[i];
            }
            x[self.mag_col(i)] = vm[i];
        }
        x
    }

    pub fn unpack(&self, x: &DVector<f64>, slack_angle: f64) -> ComplexState {
        let va = (0..self.n_bus)
            .map(|i| self.angle_col(i).map_or(slack_angle, |c| x[c]))
            .collect();
        let vm = (0..self.n_bus).map(|i| x[self.mag_col(i)]).collect();
        ComplexState::Polar { vm, va }
    }
}

/// Jacobian of `h` with respect to the polar layout.
pub(crate) fn measurement_jacobian(
    case: &GridCase,
    model: &AdmittanceModel,
    points: &[MeasPoint],
    layout: &PolarLayout,
    v: &[Complex64],
) -> Result<DMatrix<f64>> {
    let needs_inj = points.iter().any(|p| matches!(p.kind, MeasKind::Pinj | MeasKind::Qinj));
    let (d_va, d_vm) = if needs_inj {
        injection_jacobian(model, v)
    } else {
        (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
    };
    let j = Complex64::new(0.0, 1.0);
    let rows: usize = points.iter().map(|p| p.kind.rows()).sum();
    let mut h = DMatrix::zeros(rows, layout.len());
    // Writes the derivative of a complex quantity into one or two rows.
    let put = |h: &mut DMatrix<f64>, row: usize, parts: &[bool], bus: usize, da: Complex64, dm: Complex64| {
        for (k, &re) in parts.iter().enumerate() {
            let pick = |c: Complex64| if re { c.re } else { c.im };
            if let Some(c) = layout.angle_col(bus) {
                h[(row + k, c)] += pick(da);
            }
            h[(row + k, layout.mag_col(bus))] += pick(dm);
        }
    };
    let mut row = 0;
    for &p in points {
        match (p.kind, resolve(case, p)?) {
            (MeasKind::Vmag, Resolved::Bus(i)) => h[(row, layout.mag_col(i))] = 1.0,
            (MeasKind::Pinj | MeasKind::Qinj, Resolved::Bus(i)) => {
                let parts = [p.kind == MeasKind::Pinj];
                for k in 0..layout.n_bus {
                    if d_va[(i, k)] != Complex64::new(0.0, 0.0) || d_vm[(i, k)] != Complex64::new(0.0, 0.0) {
                        put(&mut h, row, &parts, k, d_va[(i, k)], d_vm[(i, k)]);
                    }
                }
            }
            (MeasKind::PhasorV, Resolved::Bus(i)) => {
                put(&mut h, row, &[true, false], i, j * v[i], v[i] / v[i].norm());
            }
            (MeasKind::Pflow | MeasKind::Qflow, Resolved::Branch(l, from)) => {
                let fs = flow_sensitivity(model, v, l, from);
                let br = model.branches()[l];
                let parts = [p.kind == MeasKind::Pflow];
                put(&mut h, row, &parts, br.from, fs.d_va_from, fs.d_vm_from);
                put(&mut h, row, &parts, br.to, fs.d_va_to, fs.d_vm_to);
            }
            (MeasKind::PhasorIline, Resolved::Branch(l, from)) => {
                let br = model.branches()[l];
                let (yf, yt) = if from { (br.yff, br.yft) } else { (br.ytf, br.ytt) };
                let (vf, vt) = (v[br.from], v[br.to]);
                put(&mut h, row, &[true, false], br.from, yf * j * vf, yf * vf / vf.norm());
                put(&mut h, row, &[true, false], br.to, yt * j * vt, yt * vt / vt.norm());
            }
            _ => unreachable!("location kinds checked by resolve"),
        }
        row += p.kind.rows();
    }
    Ok(h)
}

/// Draws `z = h(state) + σ·n` with standard normal `n`, reproducibly from `seed`.
pub fn simulate_measurements(
    case: &GridCase,
    state: &ComplexState,
    plan: &[MeasPoint],
    sigma: f64,
    seed: u64,
) -> Result<MeasurementSet> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(GridError::InvalidInput(format!(
            "sigma must be nonnegative, got {sigma}"
        )));
    }
    let model = build_admittance(case);
    let exact = measurement_values(case, &model, plan, state)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = exact.iter().map(|v| {
        let n: f64 = StandardNormal.sample(&mut rng);
        v + sigma * n
    });
    // σ = 0 still needs a positive weight for estimation.
    let weight = if sigma > 0.0 { sigma } else { 1.0 };
    let measurements = plan
        .iter()
        .map(|&p| {
            let value = match p.kind.rows() {
                1 => MeasValue::Real(noisy.next().unwrap()),
                _ => MeasValue::Phasor([noisy.next().unwrap(), noisy.next().unwrap()]),
            };
            Measurement {
                kind: p.kind,
                location: p.location,
                value,
                sigma: weight,
            }
        })
        .collect();
    Ok(MeasurementSet { measurements })
}

/// Every reading kind everywhere: magnitudes and injections at all buses,
/// flows at the `from` end of all branches.
pub fn full_plan(case: &GridCase) -> Vec<MeasPoint> {
    let mut plan = Vec::new();
    for b in case.buses() {
        for kind in [MeasKind::Vmag, MeasKind::Pinj, MeasKind::Qinj] {
            plan.push(MeasPoint::bus(kind, b.id));
        }
    }
    for l in 0..case.n_branch() {
        for kind in [MeasKind::Pflow, MeasKind::Qflow] {
            plan.push(MeasPoint::branch(kind, l, End::From));
        }
    }
    plan
}

/// Linear design matrix of DC-compatible readings over all bus angles
/// (`m × N_b`), with readings and sigmas. Rows are not whitened.
pub fn dc_design(case: &GridCase, meas: &MeasurementSet) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let points: Vec<MeasPoint> = meas.measurements.iter().map(|m| m.point()).collect();
    let h = dc_design_points(case, &points)?;
    Ok((h, meas.z(), meas.sigmas()))
}

pub fn dc_design_points(case: &GridCase, points: &[MeasPoint]) -> Result<DMatrix<f64>> {
    let n = case.n_bus();
    let mut h = DMatrix::zeros(points.len(), n);
    for (r, &p) in points.iter().enumerate() {
        if !p.kind.is_dc() {
            return Err(GridError::InvalidInput(format!(
                "{:?} is not a DC-model reading",
                p.kind
            )));
        }
        match resolve(case, p)? {
            Resolved::Bus(i) => {
                for l in 0..case.n_branch() {
                    let (f, t) = case.ends(l);
                    let w = 1.0 / case.branches()[l].x;
                    if f == i {
                        h[(r, f)] += w;
                        h[(r, t)] -= w;
                    } else if t == i {
                        h[(r, t)] += w;
                        h[(r, f)] -= w;
                    }
                }
            }
            Resolved::Branch(l, from) => {
                let (f, t) = case.ends(l);
                let w = 1.0 / case.branches()[l].x;
                let sign = if from { 1.0 } else { -1.0 };
                h[(r, f)] += sign * w;
                h[(r, t)] -= sign * w;
            }
        }
    }
    Ok(h)
}

/// Drops the reference-bus column and whitens rows by `σ`.
pub fn reduce_and_whiten(
    h_full: &DMatrix<f64>,
    z: &DVector<f64>,
    sigma: &DVector<f64>,
    reference: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let h = h_full.clone().remove_column(reference);
    let mut hw = h;
    let mut zw = z.clone();
    for r in 0..hw.nrows() {
        let s = sigma[r];
        hw.row_mut(r).unscale_mut(s);
        zw[r] /= s;
    }
    (hw, zw)
}
