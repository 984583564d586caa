use gridsp::flexload::{
    curtail_solve, dr_solve, pev_central, pev_distributed, project_box_sum, Appliance, CurtailUser, DrInstance, DrMode,
    DrOptions, DrUser, PerSlot, PevFleet, Supplier, Vehicle,
};
use gridsp::optim::{solve_qp, QpBuilder, QpOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn two_peak_fleet(rng: &mut ChaCha8Rng, n: usize) -> PevFleet {
    let base = (0..24)
        .map(|t| {
            let t = t as f64;
            10.0 + 4.0 * (-(t - 8.0).powi(2) / 6.0).exp() + 5.0 * (-(t - 19.0).powi(2) / 5.0).exp()
        })
        .collect();
    let vehicles = (0..n)
        .map(|_| {
            let cap = rng.random_range(0.8..2.0);
            Vehicle {
                r_min: PerSlot::Scalar(0.0),
                r_max: PerSlot::Scalar(cap),
                energy: rng.random_range(2.0..8.0),
            }
        })
        .collect();
    PevFleet { base, vehicles }
}

fn check_profiles(fleet: &PevFleet, profiles: &[Vec<f64>]) {
    for (v, r) in fleet.vehicles.iter().zip(profiles) {
        let PerSlot::Scalar(hi) = v.r_max else { unreachable!() };
        assert!(r.iter().all(|&x| (-1e-12..=hi + 1e-12).contains(&x)));
        assert!((r.iter().sum::<f64>() - v.energy).abs() < 1e-9);
    }
}

fn variance(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
}

#[test]
fn distributed_matches_central_on_two_peak_day() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fleet = two_peak_fleet(&mut rng, 10);
    let c = pev_central(&fleet).unwrap();
    let d = pev_distributed(&fleet, 500, 1e-6).unwrap();
    check_profiles(&fleet, &c.profiles);
    check_profiles(&fleet, &d.profiles);
    let gap = c
        .aggregate
        .iter()
        .zip(&d.aggregate)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap < 1e-4, "gap {gap} after {} iterations", d.iterations);
    for w in d.trace.windows(2) {
        assert!(w[1].objective <= w[0].objective + 1e-9);
    }
    assert_eq!(d.trace[0].iteration, 1);
}

#[test]
fn central_beats_random_feasible_profiles() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let fleet = two_peak_fleet(&mut rng, 10);
    let best = variance(&pev_central(&fleet).unwrap().aggregate);
    for _ in 0..100 {
        let profiles: Vec<Vec<f64>> = fleet
            .vehicles
            .iter()
            .map(|v| {
                let PerSlot::Scalar(hi) = v.r_max else { unreachable!() };
                let raw: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..3.0)).collect();
                project_box_sum(&raw, &[0.0; 24], &[hi; 24], v.energy).unwrap()
            })
            .collect();
        assert!(variance(&fleet.aggregate(&profiles)) >= best - 1e-9);
    }
}

#[test]
fn symmetric_fleet_keeps_identical_profiles() {
    let fleet = PevFleet {
        base: vec![5.0, 3.0, 1.0, 2.0, 4.0, 6.0],
        vehicles: vec![
            Vehicle {
                r_min: PerSlot::Scalar(0.0),
                r_max: PerSlot::Scalar(1.5),
                energy: 4.0,
            };
            4
        ],
    };
    let d = pev_distributed(&fleet, 1000, 1e-9).unwrap();
    assert!(d.converged);
    for r in &d.profiles[1..] {
        assert_eq!(r, &d.profiles[0]);
    }
}

#[test]
fn single_vehicle_converges_immediately() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let fleet = two_peak_fleet(&mut rng, 1);
    let d = pev_distributed(&fleet, 10, 1e-6).unwrap();
    assert!(d.converged && d.iterations <= 2);
    let c = pev_central(&fleet).unwrap();
    for (a, b) in c.aggregate.iter().zip(&d.aggregate) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn budget_exhaustion_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let fleet = two_peak_fleet(&mut rng, 10);
    let d = pev_distributed(&fleet, 3, 1e-12).unwrap();
    assert!(!d.converged);
    assert_eq!(d.trace.len(), 3);
}

fn random_dr(rng: &mut ChaCha8Rng, users: usize, appliances: usize, periods: usize) -> DrInstance {
    let users = (0..users)
        .map(|_| DrUser {
            appliances: (0..appliances)
                .map(|_| {
                    let hi = rng.random_range(1.0..3.0);
                    let energy = rng
                        .random_bool(0.5)
                        .then(|| rng.random_range(0.3..0.8) * hi * periods as f64);
                    Appliance {
                        weight: rng.random_range(0.5..3.0),
                        target: PerSlot::Series((0..periods).map(|_| rng.random_range(0.0..hi)).collect()),
                        p_min: PerSlot::Scalar(0.0),
                        p_max: PerSlot::Scalar(hi),
                        energy,
                        energy_max: None,
                    }
                })
                .collect(),
        })
        .collect();
    DrInstance {
        periods,
        supplier: Supplier {
            c2: rng.random_range(0.05..0.5),
            c1: rng.random_range(0.0..1.0),
            s_min: 0.0,
            s_max: None,
        },
        users,
    }
}

#[test]
fn price_coordination_matches_central_welfare() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..10 {
        let inst = random_dr(&mut rng, 3, 2, 4);
        let c = dr_solve(&inst, DrMode::Central, &DrOptions::default()).unwrap();
        let d = dr_solve(&inst, DrMode::Dual, &DrOptions::default()).unwrap();
        assert!(d.converged);
        assert!((c.welfare - d.welfare).abs() <= 1e-3 * c.welfare.abs().max(1.0));
        assert!(d.gap.unwrap().abs() <= 1e-3 * c.welfare.abs().max(1.0));
        for (a, b) in c.prices.iter().zip(&d.prices) {
            assert!((a - b).abs() < 1e-4, "{:?} vs {:?}", c.prices, d.prices);
        }
        // interior supply: price equals marginal cost
        for (s, l) in d.supply.iter().zip(&d.prices) {
            if *s > 1e-6 {
                assert!((2.0 * inst.supplier.c2 * s + inst.supplier.c1 - l).abs() < 1e-6);
            }
        }
        assert!(d.messages >= d.iterations * 2 * (inst.users.len() + 1));
    }
}

#[test]
fn curtailment_matches_qp_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let users: Vec<CurtailUser> = (0..5)
        .map(|_| CurtailUser {
            weight: rng.random_range(0.2..4.0),
            max_cut: rng.random_range(0.5..2.0),
        })
        .collect();
    let deficit = 0.6 * users.iter().map(|u| u.max_cut).sum::<f64>();
    let got = curtail_solve(&users, deficit).unwrap();
    let mut qp = QpBuilder::new(5);
    for (i, u) in users.iter().enumerate() {
        qp.quad(i, i, u.weight);
        qp.bounds(i, 0.0, u.max_cut);
    }
    qp.eq((0..5).map(|i| (i, 1.0)).collect(), deficit);
    let oracle = solve_qp(
        &qp.build(),
        QpOptions {
            tol: 1e-12,
            max_iter: 200,
        },
    )
    .unwrap();
    for (a, b) in got.cuts.iter().zip(oracle.x.iter()) {
        assert!((a - b).abs() < 1e-6);
    }
    assert!((got.cuts.iter().sum::<f64>() - deficit).abs() < 1e-8);
    assert!(curtail_solve(&users, -1.0).is_err());
}

#[test]
fn inconsistent_appliance_is_rejected() {
    let text = r#"{"periods":2,"supplier":{"c2":1},"users":[{"appliances":[
        {"weight":1,"target":1,"p_max":[1,1],"energy":5}]}]}"#;
    let inst = DrInstance::from_json(text).unwrap();
    assert!(dr_solve(&inst, DrMode::Central, &DrOptions::default()).is_err());
    let fleet = PevFleet::from_json(r#"{"base":[1,2],"vehicles":[{"r_max":[1,2,3],"energy":1}]}"#).unwrap();
    assert!(pev_central(&fleet).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn distributed_objective_is_nonincreasing(seed in 0u64..10_000, n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fleet = two_peak_fleet(&mut rng, n);
        let d = pev_distributed(&fleet, 60, 1e-9).unwrap();
        for w in d.trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-9);
        }
        check_profiles(&fleet, &d.profiles);
    }

    #[test]
    fn projection_is_feasible_and_closest(v in prop::collection::vec(-5.0f64..5.0, 2..10), frac in 0.0f64..1.0) {
        let n = v.len();
        let total = frac * n as f64;
        let x = project_box_sum(&v, &vec![0.0; n], &vec![1.0; n], total).unwrap();
        prop_assert!((x.iter().sum::<f64>() - total).abs() < 1e-12);
        prop_assert!(x.iter().all(|&y| (0.0..=1.0).contains(&y)));
        // any other feasible point is no closer
        let y = vec![frac; n];
        let dist = |z: &[f64]| z.iter().zip(&v).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        prop_assert!(dist(&x) <= dist(&y) + 1e-9);
    }
}
