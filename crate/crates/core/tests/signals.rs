use std::f64::consts::PI;

use gridsp::signals::{estimate_phasor, leakage_bound, prony_modes, Mode, ModeSet, WaveRecord};
use num_complex::Complex64;
use proptest::prelude::*;

fn mode(f: f64, decay: f64, amp: f64, phase: f64) -> Mode {
    Mode {
        frequency_hz: f,
        decay_rate: decay,
        damping_ratio: decay / (decay * decay + (2.0 * PI * f).powi(2)).sqrt(),
        amplitude: amp,
        phase,
    }
}

#[test]
fn two_interarea_modes() {
    let truth = ModeSet {
        modes: vec![mode(0.35, 0.05, 1.0, 0.4), mode(1.2, 0.3, 0.5, -1.0)],
    };
    let x = truth.synthesize(20.0, 300);
    let est = prony_modes(&x, 20.0, 4).unwrap();
    assert_eq!(est.modes.len(), 2);
    for (a, b) in est.modes.iter().zip(&truth.modes) {
        assert!((a.frequency_hz - b.frequency_hz).abs() < 1e-8);
        assert!((a.decay_rate - b.decay_rate).abs() < 1e-8);
        assert!((a.amplitude - b.amplitude).abs() < 1e-8);
        assert!((a.damping_ratio - b.damping_ratio).abs() < 1e-8);
    }
    // The fitted model regenerates the record.
    let back = est.synthesize(20.0, 300);
    let err = x.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err < 1e-9);
}

#[test]
fn overfitted_order_still_finds_the_mode() {
    let truth = ModeSet {
        modes: vec![mode(0.5, 0.1, 1.0, 0.0)],
    };
    let x = truth.synthesize(10.0, 200);
    let est = prony_modes(&x, 10.0, 8).unwrap();
    let m = est
        .modes
        .iter()
        .max_by(|a, b| a.amplitude.partial_cmp(&b.amplitude).unwrap())
        .unwrap();
    assert!((m.frequency_hz - 0.5).abs() < 1e-6 && (m.decay_rate - 0.1).abs() < 1e-6);
}

#[test]
fn csv_record_gives_nominal_phasor() {
    let fs = 960.0;
    let mut text = String::from("time,value\n");
    for n in 0..32 {
        let t = n as f64 / fs;
        text.push_str(&format!("{t},{}\n", 1.5 * (2.0 * PI * 60.0 * t - 0.7).cos()));
    }
    let rec = WaveRecord::from_csv(&text, 60.0).unwrap();
    assert!((rec.fs - fs).abs() < 1e-6);
    let ph = estimate_phasor(&rec, 0..16).unwrap();
    assert!((ph - Complex64::from_polar(1.5, -0.7)).norm() < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // At nominal frequency any whole-cycle window returns the exact phasor,
    // with time counted from the start of the record.
    #[test]
    fn phasor_exact_at_nominal(amp in 0.1f64..10.0, phase in -PI..PI, start in 0usize..32, cycles in 1usize..4) {
        let (fs, f0) = (1920.0, 60.0);
        let x: Vec<f64> = (0..200).map(|n| amp * (2.0 * PI * f0 * n as f64 / fs + phase).cos()).collect();
        let rec = WaveRecord::new(x, fs, f0).unwrap();
        let ph = estimate_phasor(&rec, start..start + 32 * cycles).unwrap();
        let want = Complex64::from_polar(amp, phase);
        prop_assert!((ph - want).norm() < 1e-12 * amp.max(1.0));
    }

    #[test]
    fn off_nominal_error_within_leakage_bound(df in -1.0f64..1.0, phase in -PI..PI) {
        let (fs, f0) = (1920.0, 60.0);
        let x: Vec<f64> = (0..32).map(|n| (2.0 * PI * (f0 + df) * n as f64 / fs + phase).cos()).collect();
        let rec = WaveRecord::new(x, fs, f0).unwrap();
        let err = (estimate_phasor(&rec, 0..32).unwrap().norm() - 1.0).abs();
        prop_assert!(err <= leakage_bound(fs, f0, 32, df) + 1e-12);
    }

    #[test]
    fn prony_recovers_any_decaying_mode(f in 0.1f64..2.0, decay in 0.0f64..0.5, amp in 0.2f64..5.0, phase in -3.0f64..3.0) {
        let truth = ModeSet { modes: vec![mode(f, decay, amp, phase)] };
        let x = truth.synthesize(25.0, 250);
        let est = prony_modes(&x, 25.0, 2).unwrap();
        prop_assert_eq!(est.modes.len(), 1);
        let m = est.modes[0];
        prop_assert!((m.frequency_hz - f).abs() < 1e-6);
        prop_assert!((m.decay_rate - decay).abs() < 1e-6);
        prop_assert!((m.amplitude - amp).abs() < 1e-6 * amp);
    }
}
