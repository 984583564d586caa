//! Case-file schema and the validated [`GridCase`].

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusType {
    #[serde(alias = "SLACK", alias = "Slack")]
    Slack,
    #[serde(alias = "PV")]
    Pv,
    #[serde(alias = "PQ")]
    Pq,
}

fn default_v_min() -> f64 {
    0.9
}

fn default_v_max() -> f64 {
    1.1
}

fn default_tap() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    #[serde(rename = "type")]
    pub kind: BusType,
    /// Shunt susceptance to ground, p.u.
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default = "default_v_min")]
    pub v_min: f64,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    /// Total line-charging susceptance; half is placed at each end.
    #[serde(default)]
    pub b_c: f64,
    /// Off-nominal turns ratio at the `from` side; 0 means no transformer.
    #[serde(default = "default_tap")]
    pub tap: f64,
    /// Phase shift in radians.
    #[serde(default)]
    pub shift: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_max: Option<f64>,
}

impl Branch {
    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }

    /// Complex turns ratio `τ e^{jα}`.
    pub fn ratio(&self) -> Complex64 {
        let tau = if self.tap == 0.0 { 1.0 } else { self.tap };
        Complex64::from_polar(tau, self.shift)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadCost {
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub c1: f64,
    #[serde(default)]
    pub c0: f64,
}

impl QuadCost {
    pub fn eval(&self, p: f64) -> f64 {
        self.c2 * p * p + self.c1 * p + self.c0
    }

    pub fn marginal(&self, p: f64) -> f64 {
        2.0 * self.c2 * p + self.c1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    #[serde(default)]
    pub q_min: Option<f64>,
    #[serde(default)]
    pub q_max: Option<f64>,
    #[serde(default)]
    pub cost: QuadCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseFile {
    version: u32,
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    #[serde(default)]
    generators: Vec<Generator>,
    #[serde(default)]
    loads: Vec<Load>,
}

/// A parsed and validated network description. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    generators: Vec<Generator>,
    loads: Vec<Load>,
    index: HashMap<usize, usize>,
    ends: Vec<(usize, usize)>,
    slack: usize,
}

pub fn parse_case(text: &str) -> Result<GridCase> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| GridError::MalformedJson(e.to_string()))?;
    if file.version != 1 {
        return Err(GridError::Version(file.version));
    }
    GridCase::new(file.buses, file.branches, file.generators, file.loads)
}

impl GridCase {
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>, generators: Vec<Generator>, loads: Vec<Load>) -> Result<Self> {
        let mut index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(GridError::DuplicateBus(b.id));
            }
            if !(b.b_shunt.is_finite() && b.v_min <= b.v_max) {
                return Err(GridError::InvalidInput(format!(
                    "bus {}: inconsistent shunt or voltage bounds",
                    b.id
                )));
            }
        }
        let slacks: Vec<usize> = buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusType::Slack)
            .map(|(i, _)| i)
            .collect();
        let slack = match slacks.len() {
            0 => return Err(GridError::MissingSlack),
            1 => slacks[0],
            n => return Err(GridError::MultipleSlack(n)),
        };
        let mut ends = Vec::with_capacity(branches.len());
        for (l, br) in branches.iter().enumerate() {
            if !(br.x > 0.0) || !br.x.is_finite() {
                return Err(GridError::NonpositiveReactance { branch: l, x: br.x });
            }
            let f = *index.get(&br.from).ok_or(GridError::DanglingEndpoint {
                branch: l,
                bus: br.from,
            })?;
            let t = *index
                .get(&br.to)
                .ok_or(GridError::DanglingEndpoint { branch: l, bus: br.to })?;
            if f == t {
                return Err(GridError::InvalidInput(format!("branch {l} is a self-loop")));
            }
            if br.tap < 0.0 || !br.r.is_finite() || !br.b_c.is_finite() || !br.shift.is_finite() {
                return Err(GridError::InvalidInput(format!(
                    "branch {l}: invalid r, b_c, tap or shift"
                )));
            }
            ends.push((f, t));
        }
        for (i, g) in generators.iter().enumerate() {
            if !index.contains_key(&g.bus) {
                return Err(GridError::UnknownBus(g.bus));
            }
            if !(g.p_min <= g.p_max) {
                return Err(GridError::InvalidGenerator {
                    index: i,
                    reason: format!("p_min {} > p_max {}", g.p_min, g.p_max),
                });
            }
            if let (Some(lo), Some(hi)) = (g.q_min, g.q_max) {
                if lo > hi {
                    return Err(GridError::InvalidGenerator {
                        index: i,
                        reason: format!("q_min {lo} > q_max {hi}"),
                    });
                }
            }
        }
        for ld in &loads {
            if !index.contains_key(&ld.bus) {
                return Err(GridError::UnknownBus(ld.bus));
            }
        }
        Ok(Self {
            buses,
            branches,
            generators,
            loads,
            index,
            ends,
            slack,
        })
    }

    pub fn to_json(&self) -> String {
        let file = CaseFile {
            version: 1,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
            generators: self.generators.clone(),
            loads: self.loads.clone(),
        };
        serde_json::to_string_pretty(&file).expect("case serializes")
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn n_bus(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branch(&self) -> usize {
        self.branches.len()
    }

    /// Position of the slack (reference) bus.
    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn bus_index(&self, id: usize) -> Result<usize> {
        self.index.get(&id).copied().ok_or(GridError::UnknownBus(id))
    }

    /// Bus positions `(from, to)` of branch `l`.
    pub fn ends(&self, l: usize) -> (usize, usize) {
        self.ends[l]
    }

    pub fn generator_bus(&self, g: usize) -> usize {
        self.index[&self.generators[g].bus]
    }

    /// Aggregate active and reactive load per bus position.
    pub fn bus_loads(&self) -> (Vec<f64>, Vec<f64>) {
        let mut p = vec![0.0; self.n_bus()];
        let mut q = vec![0.0; self.n_bus()];
        for ld in &self.loads {
            let i = self.index[&ld.bus];
            p[i] += ld.p;
            q[i] += ld.q;
        }
        (p, q)
    }

    /// Connected-component label of each bus (labels are 0..k).
    pub fn components(&self) -> Vec<usize> {
        components(self.n_bus(), self.ends.iter().copied())
    }

    pub fn n_components(&self) -> usize {
        self.components().iter().max().map_or(0, |m| m + 1)
    }

    pub fn is_connected(&self) -> bool {
        self.n_components() <= 1
    }

    /// Copy of the case with the listed branch positions taken out of service.
    pub fn without_branches(&self, removed: &[usize]) -> Result<GridCase> {
        let branches = self
            .branches
            .iter()
            .enumerate()
            .filter(|(l, _)| !removed.contains(l))
            .map(|(_, b)| b.clone())
            .collect();
        GridCase::new(
            self.buses.clone(),
            branches,
            self.generators.clone(),
            self.loads.clone(),
        )
    }
}

/// Union-find labelling of the components of an undirected edge list.
pub fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    let mut out = vec![0; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if label[r] == usize::MAX {
            label[r] = next;
            next += 1;
        }
        out[i] = label[r];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = r#"{"version":1,
        "buses":[{"id":1,"type":"slack"},{"id":2,"type":"pq"}],
        "branches":[{"from":1,"to":2,"x":0.1}]}"#;

    #[test]
    fn parses_minimal_case() {
        let c = parse_case(TWO_BUS).unwrap();
        assert_eq!(c.n_bus(), 2);
        assert_eq!(c.n_branch(), 1);
        assert_eq!(c.slack(), 0);
        assert_eq!(c.branches()[0].tap, 1.0);
    }

    #[test]
    fn distinct_diagnostics() {
        let zero_x = TWO_BUS.replace("\"x\":0.1", "\"x\":0");
        assert!(matches!(
            parse_case(&zero_x),
            Err(GridError::NonpositiveReactance { branch: 0, .. })
        ));
        let err = parse_case(&zero_x).unwrap_err().to_string();
        assert!(err.contains("nonpositive reactance"));

        let no_slack = TWO_BUS.replace("\"slack\"", "\"pv\"");
        assert_eq!(parse_case(&no_slack), Err(GridError::MissingSlack));

        let dangling = TWO_BUS.replace("\"to\":2", "\"to\":7");
        assert_eq!(
            parse_case(&dangling),
            Err(GridError::DanglingEndpoint { branch: 0, bus: 7 })
        );

        assert!(matches!(
            parse_case("{\"version\":1,"),
            Err(GridError::MalformedJson(_))
        ));
        let unknown = TWO_BUS.replace("\"x\":0.1", "\"x\":0.1,\"colour\":3");
        assert!(matches!(parse_case(&unknown), Err(GridError::MalformedJson(_))));
    }

    #[test]
    fn json_round_trip() {
        let c = parse_case(TWO_BUS).unwrap();
        let again = parse_case(&c.to_json()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn component_labels() {
        let lab = components(4, [(0, 1), (2, 3)]);
        assert_eq!(lab, vec![0, 0, 1, 1]);
    }
}
