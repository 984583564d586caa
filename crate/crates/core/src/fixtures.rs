//! Bundled test networks and random case generators.

use std::collections::HashMap;

use rand::Rng;

use crate::netmodel::{parse_case, Branch, Bus, BusType, Generator, GridCase, Load, QuadCost};
use crate::powerflow::PfSpec;

pub const CASE14_JSON: &str = include_str!("../data/case14.json");

/// The IEEE 14-bus benchmark on a 100 MVA base.
pub fn ieee14() -> GridCase {
    parse_case(CASE14_JSON).expect("bundled 14-bus case is valid")
}

/// Standard operating point of the 14-bus case: generator outputs (p.u.)
/// and voltage setpoints of the slack and PV buses, keyed by bus id.
pub fn ieee14_operating_point() -> (Vec<f64>, HashMap<usize, f64>) {
    let dispatch = vec![2.324, 0.40, 0.0, 0.0, 0.0];
    let v_set = HashMap::from([(1, 1.06), (2, 1.045), (3, 1.01), (6, 1.07), (8, 1.09)]);
    (dispatch, v_set)
}

pub fn ieee14_pf_spec() -> PfSpec {
    let case = ieee14();
    let (dispatch, v_set) = ieee14_operating_point();
    PfSpec::from_case(&case, &dispatch, &v_set).expect("14-bus spec is valid")
}

/// Balanced DC injections of the 14-bus case: generator dispatch minus load,
/// with the slack bus absorbing the imbalance.
pub fn ieee14_dc_injections() -> Vec<f64> {
    let case = ieee14();
    let (dispatch, _) = ieee14_operating_point();
    let (pl, _) = case.bus_loads();
    let mut p: Vec<f64> = pl.iter().map(|l| -l).collect();
    for (g, pg) in dispatch.iter().enumerate() {
        p[case.generator_bus(g)] += pg;
    }
    let total: f64 = p.iter().sum();
    p[case.slack()] -= total;
    p
}

fn bus(id: usize, kind: BusType) -> Bus {
    Bus {
        id,
        kind,
        b_shunt: 0.0,
        v_min: 0.9,
        v_max: 1.1,
    }
}

pub fn line(from: usize, to: usize, x: f64) -> Branch {
    Branch {
        from,
        to,
        r: 0.0,
        x,
        b_c: 0.0,
        tap: 1.0,
        shift: 0.0,
        p_max: None,
        s_max: None,
    }
}

/// Lossless ring `1-2-…-n-1` with unit-spaced ids and the given reactance.
pub fn ring(n: usize, x: f64) -> GridCase {
    let buses = (1..=n)
        .map(|i| bus(i, if i == 1 { BusType::Slack } else { BusType::Pq }))
        .collect();
    let branches = (1..=n).map(|i| line(i, i % n + 1, x)).collect();
    GridCase::new(buses, branches, vec![], vec![]).expect("ring is valid")
}

/// Lossless path `1-2-…-n` with the given reactance.
pub fn path(n: usize, x: f64) -> GridCase {
    let buses = (1..=n)
        .map(|i| bus(i, if i == 1 { BusType::Slack } else { BusType::Pq }))
        .collect();
    let branches = (1..n).map(|i| line(i, i + 1, x)).collect();
    GridCase::new(buses, branches, vec![], vec![]).expect("path is valid")
}

/// Options for [`random_case`].
#[derive(Debug, Clone, Copy)]
pub struct RandomCaseOptions {
    pub n_bus: usize,
    /// Branches added on top of the spanning structure.
    pub extra_branches: usize,
    /// Number of connected components (1 = connected).
    pub components: usize,
    pub transformers: bool,
    pub lossless: bool,
}

/// Random network: spanning trees over `components` disjoint bus groups plus
/// extra in-group branches, random π-model parameters, a few generators
/// (`p_min = 25 %` of `p_max`) and loads.
pub fn random_case<R: Rng>(rng: &mut R, opts: RandomCaseOptions) -> GridCase {
    let n = opts.n_bus.max(2);
    let k = opts.components.clamp(1, n);
    let group = |i: usize| i * k / n;
    let buses: Vec<Bus> = (0..n)
        .map(|i| {
            let kind = if i == 0 {
                BusType::Slack
            } else if rng.random_bool(0.25) {
                BusType::Pv
            } else {
                BusType::Pq
            };
            let mut b = bus(i + 1, kind);
            if rng.random_bool(0.2) {
                b.b_shunt = rng.random_range(-0.05..0.2);
            }
            b
        })
        .collect();
    let rand_branch = |rng: &mut R, f: usize, t: usize| {
        let mut br = line(f + 1, t + 1, rng.random_range(0.02..0.5));
        if !opts.lossless {
            br.r = rng.random_range(0.0..0.1);
            br.b_c = rng.random_range(0.0..0.1);
        }
        if opts.transformers && rng.random_bool(0.2) {
            br.tap = rng.random_range(0.9..1.1);
            if rng.random_bool(0.5) {
                br.shift = rng.random_range(-0.2..0.2);
            }
        }
        br
    };
    let mut branches = Vec::new();
    for i in 1..n {
        // Attach to an earlier bus of the same group, if any.
        let peers: Vec<usize> = (0..i).filter(|&j| group(j) == group(i)).collect();
        if let Some(&_first) = peers.first() {
            let j = peers[rng.random_range(0..peers.len())];
            let br = rand_branch(rng, j, i);
            branches.push(br);
        }
    }
    let mut added = 0;
    let mut attempts = 0;
    while added < opts.extra_branches && attempts < 100 * (opts.extra_branches + 1) {
        attempts += 1;
        let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
        if a == b || group(a) != group(b) {
            continue;
        }
        let br = rand_branch(rng, a, b);
        branches.push(br);
        added += 1;
    }
    let gen_buses: Vec<usize> = (0..n).filter(|&i| i == 0 || rng.random_bool(0.3)).collect();
    let generators = gen_buses
        .into_iter()
        .map(|i| {
            let p_max = rng.random_range(0.5..3.0);
            Generator {
                bus: i + 1,
                p_min: 0.25 * p_max,
                p_max,
                q_min: Some(-1.0),
                q_max: Some(1.0),
                cost: QuadCost {
                    c2: rng.random_range(0.01..0.5),
                    c1: rng.random_range(5.0..40.0),
                    c0: 0.0,
                },
            }
        })
        .collect();
    let load_buses: Vec<usize> = (0..n).filter(|_| rng.random_bool(0.6)).collect();
    let loads = load_buses
        .into_iter()
        .map(|i| Load {
            bus: i + 1,
            p: rng.random_range(0.0..0.8),
            q: rng.random_range(-0.1..0.3),
        })
        .collect();
    GridCase::new(buses, branches, generators, loads).expect("random case is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_case_shape() {
        let c = ieee14();
        assert_eq!(c.n_bus(), 14);
        assert_eq!(c.n_branch(), 20);
        assert_eq!(c.generators().len(), 5);
        assert!(c.is_connected());
        let p = ieee14_dc_injections();
        assert!(p.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn random_components() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 1..4 {
            let c = random_case(
                &mut rng,
                RandomCaseOptions {
                    n_bus: 12,
                    extra_branches: 5,
                    components: k,
                    transformers: true,
                    lossless: false,
                },
            );
            assert_eq!(c.n_components(), k);
        }
    }
}
