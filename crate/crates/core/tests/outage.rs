use gridsp::fixtures::{ieee14, ieee14_dc_injections};
use gridsp::netmodel::{build_dc, DcModel};
use gridsp::outage::{build_outage_model, identify_exhaustive, identify_omp, simulate_outage, OmpStop, OutageModel};
use gridsp::powerflow::solve_dc;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn non_islanding(k: usize) -> Vec<Vec<usize>> {
    let case = ieee14();
    let nl = case.n_branch();
    let sets: Vec<Vec<usize>> = match k {
        1 => (0..nl).map(|l| vec![l]).collect(),
        _ => (0..nl).flat_map(|a| (a + 1..nl).map(move |b| vec![a, b])).collect(),
    };
    sets.into_iter()
        .filter(|s| case.without_branches(s).unwrap().is_connected())
        .collect()
}

fn model_for(dc: &DcModel, set: &[usize]) -> OutageModel {
    let (pre, post) = simulate_outage(&ieee14(), &ieee14_dc_injections(), set).unwrap();
    let internal: Vec<usize> = (0..14).collect();
    build_outage_model(dc, &pre, &post, &internal).unwrap()
}

#[test]
fn omp_matches_enumeration_without_noise() {
    let dc = build_dc(&ieee14());
    let mut ambiguous = 0;
    let mut misses = Vec::new();
    for k in [1, 2] {
        for set in non_islanding(k) {
            let model = model_for(&dc, &set);
            let oracle = identify_exhaustive(&model, k).unwrap();
            let omp = identify_omp(&model, OmpStop::Sparsity(k));
            let tol = 1e-9 * (1.0 + model.observation.norm());
            assert!(
                oracle.residual < tol,
                "{set:?} {} {}",
                oracle.residual,
                model.observation.norm()
            );
            if oracle.alternatives.is_empty() {
                assert_eq!(oracle.lines, set);
                if omp.lines != oracle.lines {
                    misses.push((set.clone(), omp.lines.clone()));
                }
            } else {
                // Equally good supports: OMP must land on one of them.
                ambiguous += 1;
                assert!(omp.residual < tol, "{set:?}");
                assert!(omp.lines == oracle.lines || oracle.alternatives.contains(&omp.lines));
            }
        }
    }
    assert!(misses.is_empty(), "{misses:?}");
    // Only line pairs closing a triangle are confusable.
    assert!(ambiguous > 0 && ambiguous < 25, "{ambiguous}");
}

#[test]
fn single_outages_are_all_identifiable() {
    let dc = build_dc(&ieee14());
    for set in non_islanding(1) {
        let model = model_for(&dc, &set);
        let omp = identify_omp(&model, OmpStop::Residual(1e-9 * (1.0 + model.observation.norm())));
        assert_eq!(omp.lines, set);
    }
}

#[test]
fn omp_double_outages_at_40_db() {
    let dc = build_dc(&ieee14());
    let pairs: Vec<Vec<usize>> = non_islanding(2)
        .into_iter()
        .filter(|s| {
            identify_exhaustive(&model_for(&dc, s), 2)
                .unwrap()
                .alternatives
                .is_empty()
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut hits = 0;
    for _ in 0..100 {
        let set = &pairs[rng.random_range(0..pairs.len())];
        let mut model = model_for(&dc, set);
        // Zero-mean injection perturbation propagated through the network.
        let mut eta: Vec<f64> = (0..14).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mean = eta.iter().sum::<f64>() / 14.0;
        eta.iter_mut().for_each(|e| *e -= mean);
        let spread = solve_dc(&dc, &eta, dc.slack()).unwrap();
        let noise = DVector::from_iterator(13, model.internal.iter().map(|&b| spread[b]));
        let signal = model.theta_diff.clone();
        let scaled = &noise * (signal.norm() / noise.norm() * 10f64.powf(-40.0 / 20.0));
        model.set_theta_diff(signal + scaled).unwrap();
        if identify_omp(&model, OmpStop::Sparsity(2)).lines == *set {
            hits += 1;
        }
    }
    assert!(hits >= 90, "{hits}/100");
}
