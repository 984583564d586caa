use gridsp::commitment::{uc_bruteforce, uc_lagrangian, UcInstance, UcOptions, UcSchedule, UnitSpec};
use gridsp::dispatch::{economic_dispatch, CostFunction, GenOffer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_instance(rng: &mut ChaCha8Rng, n_units: usize, periods: usize) -> UcInstance {
    let units: Vec<UnitSpec> = (0..n_units)
        .map(|_| {
            let p_max = rng.random_range(1.0..4.0);
            let cost = CostFunction::quadratic(
                rng.random_range(0.01..0.3),
                rng.random_range(5.0..40.0),
                rng.random_range(0.0..20.0),
            );
            let mut u = UnitSpec::new(cost, 0.25 * p_max, p_max);
            u.startup_cost = rng.random_range(0.0..50.0);
            u.min_up = rng.random_range(1..3);
            u.min_down = rng.random_range(1..3);
            if rng.random_bool(0.5) {
                u.ramp_up = Some(rng.random_range(0.3..1.0) * p_max);
                u.ramp_down = Some(rng.random_range(0.3..1.0) * p_max);
            }
            if rng.random_bool(0.5) {
                u.initially_on = true;
                u.initial_output = rng.random_range(u.p_min..p_max);
            }
            u
        })
        .collect();
    let cap: f64 = units.iter().map(|u| u.p_max).sum();
    let demand = (0..periods).map(|_| rng.random_range(0.1..0.9) * cap).collect();
    UcInstance { demand, units }
}

fn assert_feasible(inst: &UcInstance, s: &UcSchedule) {
    for (m, u) in inst.units.iter().enumerate() {
        assert!(u.respects_min_times(&s.on[m]));
        for t in 0..inst.periods() {
            let p = s.output[m][t];
            if s.on[m][t] {
                assert!(p >= u.p_min - 1e-9 && p <= u.p_max + 1e-9);
                let prev = if t == 0 {
                    u.initially_on.then_some(u.initial_output)
                } else {
                    s.on[m][t - 1].then(|| s.output[m][t - 1])
                };
                if let Some(q) = prev {
                    assert!(p - q <= u.ramp_up.unwrap_or(f64::INFINITY) + 1e-7);
                    assert!(q - p <= u.ramp_down.unwrap_or(f64::INFINITY) + 1e-7);
                }
            } else {
                assert_eq!(p, 0.0);
            }
        }
    }
    for t in 0..inst.periods() {
        let total: f64 = s.output.iter().map(|row| row[t]).sum();
        assert!((total - inst.demand[t]).abs() < 1e-7);
    }
}

#[test]
fn lagrangian_within_one_percent_of_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 20 {
        let inst = random_instance(&mut rng, 2, 3);
        let Ok(exact) = uc_bruteforce(&inst) else {
            continue;
        };
        let lr = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
        assert_feasible(&inst, &exact);
        assert_feasible(&inst, &lr);
        assert!(lr.cost >= exact.cost - 1e-6);
        assert!(lr.cost <= 1.01 * exact.cost, "{} vs {}", lr.cost, exact.cost);
        assert!(lr.dual_bound.unwrap() <= exact.cost + 1e-9);
        checked += 1;
    }
}

#[test]
fn single_period_must_run_is_dispatch() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let mut inst = random_instance(&mut rng, 3, 1);
        for u in &mut inst.units {
            u.must_run = true;
            u.ramp_up = None;
            u.ramp_down = None;
            u.startup_cost = 0.0;
            u.initially_on = true;
            u.initial_output = u.p_min;
        }
        let floor: f64 = inst.units.iter().map(|u| u.p_min).sum();
        inst.demand[0] = inst.demand[0].max(floor + 0.1);
        let offers: Vec<GenOffer> = inst
            .units
            .iter()
            .map(|u| GenOffer::new(u.cost.clone(), u.p_min, u.p_max))
            .collect();
        let ed = economic_dispatch(&offers, inst.demand[0], None).unwrap();
        let b = uc_bruteforce(&inst).unwrap();
        let l = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
        assert!((b.cost - ed.objective).abs() < 1e-6);
        assert!((l.cost - ed.objective).abs() < 1e-6);
    }
}

#[test]
fn added_capacity_never_raises_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut swept = 0;
    while swept < 5 {
        let inst = random_instance(&mut rng, 2, 3);
        let Ok(base) = uc_bruteforce(&inst) else {
            continue;
        };
        let mut prev = base.cost;
        for extra in [0.5, 1.0, 2.0] {
            let mut bigger = inst.clone();
            bigger.units[0].p_max += extra;
            let s = uc_bruteforce(&bigger).unwrap();
            assert!(s.cost <= prev + 1e-7);
            prev = s.cost;
        }
        swept += 1;
    }
}

#[test]
fn instance_json_round_trip() {
    let text = r#"{"demand":[0,2],"units":[{"cost":{"type":"quadratic","c1":1},
        "p_min":1,"p_max":2,"startup_cost":10}]}"#;
    let inst = UcInstance::from_json(text).unwrap();
    assert_eq!(inst.units[0].min_up, 1);
    let s = uc_lagrangian(&inst, &UcOptions::default()).unwrap();
    assert!((s.cost - 12.0).abs() < 1e-9);
    assert!(UcInstance::from_json(r#"{"demand":[1],"units":[],"extra":1}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn weak_duality_and_feasibility(seed in 0u64..100_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 2, 3);
        if let Ok(exact) = uc_bruteforce(&inst) {
            let opts = UcOptions { iterations: 150, ..UcOptions::default() };
            let lr = uc_lagrangian(&inst, &opts).unwrap();
            prop_assert!(lr.dual_bound.unwrap() <= exact.cost + 1e-9);
            prop_assert!(lr.gap.unwrap() >= -1e-9);
            assert_feasible(&inst, &lr);
        }
    }
}
