//! Waveform utilities: nominal-frequency phasor estimation and Prony mode
//! estimation from ring-down records.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GridError, Result};
use crate::linalg::{lstsq_min_norm, Svd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveRecord {
    pub samples: Vec<f64>,
    /// Sample rate, Hz.
    pub fs: f64,
    /// Nominal frequency, Hz.
    pub f0: f64,
}

impl WaveRecord {
    pub fn new(samples: Vec<f64>, fs: f64, f0: f64) -> Result<Self> {
        if !(f0 > 0.0 && fs > 2.0 * f0) {
            return Err(GridError::InvalidInput(format!(
                "sample rate {fs} Hz must exceed twice the nominal {f0} Hz"
            )));
        }
        let rec = Self { samples, fs, f0 };
        if (rec.samples.len() as f64) < rec.samples_per_cycle() - 1e-9 {
            return Err(GridError::InvalidInput(
                "record is shorter than one nominal cycle".into(),
            ));
        }
        Ok(rec)
    }

    /// Reads `time,value` rows (header optional); the sample rate comes from
    /// the time step, which must be uniform.
    pub fn from_csv(text: &str, f0: f64) -> Result<Self> {
        let (t, x) = read_time_series(text)?;
        if t.len() < 2 {
            return Err(GridError::InvalidInput("need at least two samples".into()));
        }
        let fs = sample_rate(&t)?;
        Self::new(x, fs, f0)
    }

    pub fn samples_per_cycle(&self) -> f64 {
        self.fs / self.f0
    }
}

/// Parses `time,value` CSV rows; a non-numeric first row is taken as a header.
pub fn read_time_series(text: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let (mut t, mut x) = (Vec::new(), Vec::new());
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| GridError::InvalidInput(format!("CSV: {e}")))?;
        if row.len() != 2 {
            return Err(GridError::InvalidInput(format!(
                "CSV row {} has {} fields, expected 2",
                i + 1,
                row.len()
            )));
        }
        match (row[0].parse::<f64>(), row[1].parse::<f64>()) {
            (Ok(a), Ok(b)) => {
                t.push(a);
                x.push(b);
            }
            _ if i == 0 => continue,
            _ => return Err(GridError::InvalidInput(format!("CSV row {} is not numeric", i + 1))),
        }
    }
    Ok((t, x))
}

/// Sample rate implied by uniformly spaced time stamps.
pub fn sample_rate(t: &[f64]) -> Result<f64> {
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if dt <= 0.0 {
        return Err(GridError::InvalidInput("time stamps must increase".into()));
    }
    if t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt) {
        return Err(GridError::InvalidInput("time stamps are not uniformly spaced".into()));
    }
    Ok(1.0 / dt)
}

/// Phasor `A·e^{jφ}` of `A·cos(2πf₀t + φ)` by correlating the window with
/// the nominal cosine and sine. Time is measured from the first sample of
/// the record, and the window must hold a whole number of nominal cycles.
pub fn estimate_phasor(rec: &WaveRecord, window: Range<usize>) -> Result<Complex64> {
    if window.end > rec.samples.len() || window.is_empty() {
        return Err(GridError::InvalidInput(format!(
            "window {window:?} outside record of {} samples",
            rec.samples.len()
        )));
    }
    let len = window.len() as f64;
    let cycles = len / rec.samples_per_cycle();
    if (cycles - cycles.round()).abs() > 1e-9 || cycles.round() < 1.0 {
        return Err(GridError::InvalidInput(format!(
            "window spans {cycles} nominal cycles, not a whole number"
        )));
    }
    let w = 2.0 * PI * rec.f0 / rec.fs;
    let acc: Complex64 = window
        .map(|n| rec.samples[n] * Complex64::from_polar(1.0, -w * n as f64))
        .sum();
    Ok(acc * (2.0 / len))
}

fn dirichlet(x: f64, len: usize) -> f64 {
    let s = (x / 2.0).sin();
    if s.abs() < 1e-15 {
        1.0
    } else {
        ((len as f64 * x / 2.0).sin() / (len as f64 * s)).abs()
    }
}

/// Worst-case relative magnitude error of [`estimate_phasor`] when the
/// input runs at `f0 + delta_f` instead of `f0`: the loss of the main lobe
/// plus the leakage of the negative-frequency image.
pub fn leakage_bound(fs: f64, f0: f64, window_len: usize, delta_f: f64) -> f64 {
    let w0 = 2.0 * PI * f0 / fs;
    let dw = 2.0 * PI * delta_f / fs;
    (1.0 - dirichlet(dw, window_len)) + dirichlet(2.0 * w0 + dw, window_len)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub frequency_hz: f64,
    /// Exponential decay rate, 1/s (positive when the mode dies out).
    pub decay_rate: f64,
    pub damping_ratio: f64,
    /// Peak amplitude of the real oscillation at t = 0.
    pub amplitude: f64,
    /// Phase at t = 0, rad.
    pub phase: f64,
}

/// Modes sorted by frequency; conjugate root pairs appear once.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModeSet {
    pub modes: Vec<Mode>,
}

impl ModeSet {
    /// Samples `Σ A e^{−αt} cos(2πft + φ)` at `t = n/fs`.
    pub fn synthesize(&self, fs: f64, len: usize) -> Vec<f64> {
        (0..len)
            .map(|n| {
                let t = n as f64 / fs;
                self.modes
                    .iter()
                    .map(|m| m.amplitude * (-m.decay_rate * t).exp() * (2.0 * PI * m.frequency_hz * t + m.phase).cos())
                    .sum()
            })
            .collect()
    }
}

fn polish_root(coef: &[f64], mut z: Complex64) -> Complex64 {
    // Monic polynomial z^p + coef[0] z^{p-1} + … + coef[p-1].
    for _ in 0..8 {
        let (mut p, mut dp) = (Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0));
        for &c in coef {
            dp = dp * z + p;
            p = p * z + c;
        }
        if dp.norm() == 0.0 {
            break;
        }
        let step = p / dp;
        z -= step;
        if step.norm() <= 1e-16 * z.norm().max(1.0) {
            break;
        }
    }
    z
}

/// Prony analysis: forward linear prediction, roots of the prediction
/// polynomial, and a Vandermonde least-squares refit of the residues.
///
/// When the prediction matrix has numerical rank below `order` the model
/// order drops to that rank, so e.g. a constant record yields a single
/// zero-frequency mode.
pub fn prony_modes(samples: &[f64], fs: f64, order: usize) -> Result<ModeSet> {
    let n = samples.len();
    if order == 0 || n < 2 * order + 1 {
        return Err(GridError::InvalidInput(format!(
            "Prony order {order} needs at least {} samples, got {n}",
            2 * order + 1
        )));
    }
    if fs <= 0.0 {
        return Err(GridError::InvalidInput("sample rate must be positive".into()));
    }
    let build = |p: usize| {
        let rows = n - p;
        let a = DMatrix::from_fn(rows, p, |r, k| samples[r + p - 1 - k]);
        let b = DVector::from_fn(rows, |r, _| -samples[r + p]);
        (a, b)
    };
    let (a, _) = build(order);
    let rank = Svd::new(&a).rank();
    if rank == 0 {
        return Err(GridError::RankDeficient { rank: 0, needed: order });
    }
    let p = rank.min(order);
    let (a, b) = build(p);
    let lp = lstsq_min_norm(&a, &b);
    let coef: Vec<f64> = lp.iter().copied().collect();
    let mut companion = DMatrix::zeros(p, p);
    for k in 0..p {
        companion[(0, k)] = -coef[k];
    }
    for k in 1..p {
        companion[(k, k - 1)] = 1.0;
    }
    let roots: Vec<Complex64> = companion
        .complex_eigenvalues()
        .iter()
        .map(|&z| polish_root(&coef, z))
        .collect();

    let v = DMatrix::from_fn(n, p, |r, k| roots[k].powu(r as u32));
    let x = DVector::from_iterator(n, samples.iter().map(|&s| Complex64::new(s, 0.0)));
    let qr = v.clone().qr();
    let residues = qr
        .r()
        .solve_upper_triangular(&(qr.q().adjoint() * &x))
        .ok_or_else(|| GridError::Singular("Vandermonde refit (repeated roots)".into()))?;

    let tol = 1e-9;
    let mut modes = Vec::new();
    for (k, &z) in roots.iter().enumerate() {
        if z.im < -tol * z.norm() {
            continue;
        }
        let s = z.ln() * fs;
        let paired = z.im > tol * z.norm();
        let r = residues[k];
        let amplitude = if paired { 2.0 * r.norm() } else { r.re.abs() };
        let phase = if paired {
            r.arg()
        } else if r.re < 0.0 {
            PI
        } else {
            0.0
        };
        let omega = if paired {
            s.im.abs()
        } else if z.re < 0.0 {
            PI * fs
        } else {
            0.0
        };
        let decay = -s.re;
        let mag = (decay * decay + omega * omega).sqrt();
        modes.push(Mode {
            frequency_hz: omega / (2.0 * PI),
            decay_rate: decay,
            damping_ratio: if mag > 0.0 { decay / mag } else { 0.0 },
            amplitude,
            phase,
        });
    }
    modes.sort_by(|a, b| a.frequency_hz.total_cmp(&b.frequency_hz));
    Ok(ModeSet { modes })
}
