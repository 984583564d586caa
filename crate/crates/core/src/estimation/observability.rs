//! Observability of the active-power (P–θ) subproblem, numerically from the
//! null space of `H` and topologically from a measurement-assigned forest.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::Serialize;

use super::measurement::{resolve, MeasKind, MeasurementSet, Resolved};
use crate::error::{GridError, Result};
use crate::linalg::null_space;
use crate::netmodel::{components, GridCase};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observability {
    pub observable: bool,
    /// Bus-index partition, each island sorted, islands ordered by first bus.
    pub islands: Vec<Vec<usize>>,
    /// Branches whose flow is recoverable (numerical) or that carry a
    /// measurement assignment (topological forest).
    pub branches: Vec<usize>,
    /// Measurement assigned to each forest branch (topological only).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub assigned: Vec<usize>,
    /// Injection readings discarded because they touch an unobservable branch.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<usize>,
}

fn partition(labels: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (bus, &l) in labels.iter().enumerate() {
        let g = *index.entry(l).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(bus);
    }
    groups
}

/// `h` spans all bus angles (`m × N_b`); `a` is the branch–bus incidence.
pub fn observability_numerical(h: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<Observability> {
    if h.ncols() != a.ncols() {
        return Err(GridError::DimensionMismatch {
            what: "incidence columns",
            expected: h.ncols(),
            got: a.ncols(),
        });
    }
    let n = h.ncols();
    let basis = null_space(h);
    let coupling = a * &basis;
    let determined: Vec<usize> = (0..a.nrows())
        .filter(|&l| basis.ncols() == 0 || coupling.row(l).amax() < 1e-8)
        .collect();
    let edges = determined.iter().map(|&l| {
        let f = (0..n).find(|&b| a[(l, b)] > 0.0).expect("incidence row has a from end");
        let t = (0..n).find(|&b| a[(l, b)] < 0.0).expect("incidence row has a to end");
        (f, t)
    });
    let islands = partition(&components(n, edges));
    Ok(Observability {
        observable: islands.len() == 1,
        islands,
        branches: determined,
        assigned: Vec::new(),
        dropped: Vec::new(),
    })
}

fn is_forest(n: usize, edges: impl Iterator<Item = (usize, usize)>) -> bool {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for (f, t) in edges {
        let (rf, rt) = (find(&mut parent, f), find(&mut parent, t));
        if rf == rt {
            return false;
        }
        parent[rf] = rt;
    }
    true
}

/// Largest set of (measurement, branch) pairs that uses every measurement at
/// most once and whose branches form a forest: matroid intersection of a
/// partition matroid and the graphic matroid by augmenting paths.
fn max_assigned_forest(n_bus: usize, ends: &[(usize, usize)], pairs: &[(usize, usize)]) -> Vec<usize> {
    let ne = pairs.len();
    let mut chosen = vec![false; ne];
    let m1 = |set: &[usize]| {
        let mut seen = std::collections::HashSet::new();
        set.iter().all(|&e| seen.insert(pairs[e].0))
    };
    let m2 = |set: &[usize]| is_forest(n_bus, set.iter().map(|&e| ends[pairs[e].1]));
    loop {
        let current: Vec<usize> = (0..ne).filter(|&e| chosen[e]).collect();
        let outside: Vec<usize> = (0..ne).filter(|&e| !chosen[e]).collect();
        let with = |x: usize, drop: Option<usize>| -> Vec<usize> {
            current
                .iter()
                .copied()
                .filter(|&e| Some(e) != drop)
                .chain(std::iter::once(x))
                .collect()
        };
        let sources: Vec<usize> = outside.iter().copied().filter(|&x| m1(&with(x, None))).collect();
        let sinks: Vec<bool> = (0..ne).map(|x| !chosen[x] && m2(&with(x, None))).collect();
        let mut prev = vec![usize::MAX; ne];
        let mut seen = vec![false; ne];
        let mut queue = VecDeque::new();
        for &s in &sources {
            seen[s] = true;
            queue.push_back(s);
        }
        let mut end = None;
        while let Some(u) = queue.pop_front() {
            if sinks[u] {
                end = Some(u);
                break;
            }
            let next: Vec<usize> = if chosen[u] {
                outside.iter().copied().filter(|&x| m1(&with(x, Some(u)))).collect()
            } else {
                current.iter().copied().filter(|&y| m2(&with(u, Some(y)))).collect()
            };
            for v in next {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        let Some(mut v) = end else {
            return current;
        };
        loop {
            chosen[v] = !chosen[v];
            if prev[v] == usize::MAX {
                break;
            }
            v = prev[v];
        }
    }
}

/// Topological observability. Only active-power readings (`pinj`, `pflow`)
/// take part; other kinds are ignored.
pub fn observability_topological(case: &GridCase, meas: &MeasurementSet) -> Result<Observability> {
    meas.validate(case)?;
    let n = case.n_bus();
    let ends: Vec<(usize, usize)> = (0..case.n_branch()).map(|l| case.ends(l)).collect();
    let mut readings: Vec<(usize, Resolved)> = Vec::new();
    for (i, m) in meas.measurements.iter().enumerate() {
        if matches!(m.kind, MeasKind::Pinj | MeasKind::Pflow) {
            readings.push((i, resolve(case, m.point())?));
        }
    }
    let mut dropped = Vec::new();
    loop {
        let mut pairs = Vec::new();
        for (k, &(i, r)) in readings.iter().enumerate() {
            if dropped.contains(&i) {
                continue;
            }
            match r {
                Resolved::Branch(l, _) => pairs.push((k, l)),
                Resolved::Bus(b) => pairs.extend(
                    (0..ends.len())
                        .filter(|&l| ends[l].0 == b || ends[l].1 == b)
                        .map(|l| (k, l)),
                ),
            }
        }
        let forest = max_assigned_forest(n, &ends, &pairs);
        let labels = components(n, forest.iter().map(|&e| ends[pairs[e].1]));
        // An injection next to a branch between islands relates unknown flows.
        let newly: Vec<usize> = readings
            .iter()
            .filter(|(i, _)| !dropped.contains(i))
            .filter_map(|&(i, r)| match r {
                Resolved::Bus(b) => ends
                    .iter()
                    .any(|&(f, t)| (f == b || t == b) && labels[f] != labels[t])
                    .then_some(i),
                Resolved::Branch(..) => None,
            })
            .collect();
        if newly.is_empty() {
            let mut assignment: Vec<(usize, usize)> =
                forest.iter().map(|&e| (pairs[e].1, readings[pairs[e].0].0)).collect();
            assignment.sort_unstable();
            let islands = partition(&labels);
            dropped.sort_unstable();
            return Ok(Observability {
                observable: islands.len() == 1,
                islands,
                branches: assignment.iter().map(|a| a.0).collect(),
                assigned: assignment.iter().map(|a| a.1).collect(),
                dropped,
            });
        }
        dropped.extend(newly);
    }
}
