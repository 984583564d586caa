use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::{json, Value};

use gridsp::estimation::{
    bad_data_scan, build_attack, dc_design, dc_design_points, dc_linear_se, full_plan, observability_numerical,
    observability_topological, reduce_and_whiten, simulate_measurements, wls_gauss_newton, BadDataOptions, End,
    MeasKind, MeasPoint, MeasValue, Measurement, MeasurementSet, WlsOptions,
};
use gridsp::netmodel::{build_dc, GridCase};
use gridsp::outage::{build_outage_model, identify_exhaustive, identify_omp, simulate_outage, OmpStop};
use gridsp::powerflow::{q_limit_violations, solve_ac, solve_dc, AcOptions, BusSpec, PfEntry, PfSpec};
use gridsp::signals::{estimate_phasor, prony_modes, WaveRecord};

use crate::report::{num, CliError, CliResult, Outcome, Run};
use crate::Plan;

/// Reads a per-bus vector given as an array in bus order or as an object
/// keyed by bus id (absent buses are zero).
fn bus_vector(run: &mut Run, case: &GridCase, path: &Path) -> CliResult<Vec<f64>> {
    let value: Value = run.json(path)?;
    bus_values(case, value, path)
}

fn bus_values(case: &GridCase, value: Value, path: &Path) -> CliResult<Vec<f64>> {
    let bad = |what: String| CliError::Invalid(format!("{}: {what}", path.display()));
    match value {
        Value::Array(items) => {
            if items.len() != case.n_bus() {
                return Err(bad(format!("expected {} values, got {}", case.n_bus(), items.len())));
            }
            items
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| bad(format!("{v} is not a number"))))
                .collect()
        }
        Value::Object(map) => {
            let mut out = vec![0.0; case.n_bus()];
            for (key, v) in &map {
                let id: usize = key.parse().map_err(|_| bad(format!("bus id {key:?}")))?;
                out[case.bus_index(id)?] = v.as_f64().ok_or_else(|| bad(format!("{v} is not a number")))?;
            }
            Ok(out)
        }
        _ => Err(bad("expected an array or an object".into())),
    }
}

/// Loads as negative injections with the slack covering the total.
fn load_injections(case: &GridCase) -> Vec<f64> {
    let (pl, _) = case.bus_loads();
    let mut p: Vec<f64> = pl.iter().map(|l| -l).collect();
    p[case.slack()] += pl.iter().sum::<f64>();
    p
}

fn injections(run: &mut Run, case: &GridCase, path: Option<&Path>) -> CliResult<Vec<f64>> {
    match path {
        Some(p) => bus_vector(run, case, p),
        None => Ok(load_injections(case)),
    }
}

fn bus_ids(case: &GridCase) -> Vec<usize> {
    case.buses().iter().map(|b| b.id).collect()
}

pub fn case_validate(run: &mut Run, path: &Path) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let (pl, ql) = case.bus_loads();
    Outcome::ok(&json!({
        "buses": case.n_bus(),
        "branches": case.n_branch(),
        "generators": case.generators().len(),
        "loads": case.loads().len(),
        "slack": case.buses()[case.slack()].id,
        "components": case.n_components(),
        "connected": case.is_connected(),
        "total_load": {"p": pl.iter().sum::<f64>(), "q": ql.iter().sum::<f64>()},
    }))
}

pub fn pf_dc(run: &mut Run, path: &Path, inj: Option<&Path>, reference: Option<usize>) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let p = injections(run, &case, inj)?;
    let ref_pos = match reference {
        Some(id) => case.bus_index(id)?,
        None => case.slack(),
    };
    let dc = build_dc(&case);
    let theta = solve_dc(&dc, &p, ref_pos)?;
    let flows: Vec<f64> = dc.flows(&DVector::from_column_slice(&theta)).iter().copied().collect();
    let ids = bus_ids(&case);
    run.write_csv(
        "theta.csv",
        &["bus", "theta"],
        ids.iter().zip(&theta).map(|(id, t)| [id.to_string(), num(*t)]),
    )?;
    run.write_csv(
        "flows.csv",
        &["branch", "from", "to", "flow"],
        case.branches()
            .iter()
            .zip(&flows)
            .enumerate()
            .map(|(l, (b, f))| [l.to_string(), b.from.to_string(), b.to.to_string(), num(*f)]),
    )?;
    Outcome::ok(&json!({
        "reference": ids[ref_pos],
        "injections": p,
        "theta": theta,
        "flows": flows,
    }))
}

fn pf_spec(run: &mut Run, case: &GridCase, path: &Path) -> CliResult<PfSpec> {
    let entries: Vec<PfEntry> = run.json(path)?;
    PfSpec::from_entries(case, &entries).map_err(|source| CliError::Input {
        path: path.to_path_buf(),
        source,
    })
}

pub fn pf_ac(run: &mut Run, path: &Path, spec: &Path, tol: f64, max_iter: usize) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let spec = pf_spec(run, &case, spec)?;
    let sol = solve_ac(&case, &spec, AcOptions { tol, max_iter })?;
    let (vm, va) = (sol.state.magnitudes(), sol.state.angles());
    run.write_csv(
        "voltages.csv",
        &["bus", "vm", "va"],
        bus_ids(&case)
            .iter()
            .enumerate()
            .map(|(i, id)| [id.to_string(), num(vm[i]), num(va[i])]),
    )?;
    let violations = q_limit_violations(&case, &sol.state);
    Outcome::with_status(
        &json!({
            "converged": sol.converged,
            "iterations": sol.iterations,
            "mismatch": sol.mismatch,
            "vm": vm,
            "va": va,
            "q_limit_violations": violations,
        }),
        sol.converged,
    )
}

pub fn se_simulate(run: &mut Run, path: &Path, spec: &Path, plan: Plan, sigma: f64, seed: u64) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let spec = pf_spec(run, &case, spec)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(CliError::Invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    let (meas, vm, va) = match plan {
        Plan::Full => {
            let pf = solve_ac(&case, &spec, AcOptions::default())?;
            if !pf.converged {
                return Err(CliError::Invalid(format!(
                    "power flow did not converge (mismatch {:e})",
                    pf.mismatch
                )));
            }
            let meas = simulate_measurements(&case, &pf.state, &full_plan(&case), sigma, seed)?;
            (meas, pf.state.magnitudes(), pf.state.angles())
        }
        Plan::Dc => {
            let mut p: Vec<f64> = spec
                .buses()
                .iter()
                .map(|b| match *b {
                    BusSpec::Pv { p, .. } | BusSpec::Pq { p, .. } => p,
                    BusSpec::Slack { .. } => 0.0,
                })
                .collect();
            p[case.slack()] = -p.iter().sum::<f64>();
            let theta = solve_dc(&build_dc(&case), &p, case.slack())?;
            let mut points: Vec<MeasPoint> = bus_ids(&case)
                .into_iter()
                .map(|id| MeasPoint::bus(MeasKind::Pinj, id))
                .collect();
            for end in [End::From, End::To] {
                points.extend((0..case.n_branch()).map(|l| MeasPoint::branch(MeasKind::Pflow, l, end)));
            }
            let exact = dc_design_points(&case, &points)? * DVector::from_column_slice(&theta);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weight = if sigma > 0.0 { sigma } else { 1.0 };
            let readings = points
                .iter()
                .zip(exact.iter())
                .map(|(pt, v)| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    Measurement {
                        kind: pt.kind,
                        location: pt.location,
                        value: MeasValue::Real(v + sigma * n),
                        sigma: weight,
                    }
                })
                .collect();
            (MeasurementSet::new(readings), vec![1.0; case.n_bus()], theta)
        }
    };
    run.write_text("meas.json", &meas.to_json())?;
    Outcome::ok(&json!({
        "readings": meas.len(),
        "sigma": sigma,
        "seed": seed,
        "vm": vm,
        "va": va,
    }))
}

pub fn se_run(run: &mut Run, path: &Path, meas: &Path, tol: f64, max_iter: usize) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let meas = run.parse(meas, MeasurementSet::from_json)?;
    let res = wls_gauss_newton(&case, &meas, None, WlsOptions { tol, max_iter })?;
    if let Some(v) = &res.voltages {
        let (vm, va) = (v.magnitudes(), v.angles());
        run.write_csv(
            "state.csv",
            &["bus", "vm", "va"],
            bus_ids(&case)
                .iter()
                .enumerate()
                .map(|(i, id)| [id.to_string(), num(vm[i]), num(va[i])]),
        )?;
    }
    let converged = res.converged;
    Outcome::with_status(&res, converged)
}

/// Active readings of a set, with their positions in the full list.
fn active(meas: &MeasurementSet) -> (MeasurementSet, Vec<usize>) {
    let (idx, kept): (Vec<usize>, Vec<_>) = meas
        .measurements
        .iter()
        .enumerate()
        .filter(|(_, m)| m.kind.is_dc())
        .map(|(i, m)| (i, m.clone()))
        .unzip();
    (MeasurementSet::new(kept), idx)
}

struct Whitened {
    h_full: DMatrix<f64>,
    h: DMatrix<f64>,
    z: DVector<f64>,
    sigma: DVector<f64>,
    index: Vec<usize>,
}

fn whitened(case: &GridCase, meas: &MeasurementSet) -> CliResult<Whitened> {
    let (dc_meas, index) = active(meas);
    if dc_meas.is_empty() {
        return Err(CliError::Invalid("no active-power readings (pinj, pflow)".into()));
    }
    let (h_full, z, sigma) = dc_design(case, &dc_meas)?;
    let (h, zw) = reduce_and_whiten(&h_full, &z, &sigma, case.slack());
    Ok(Whitened {
        h_full,
        h,
        z: zw,
        sigma,
        index,
    })
}

/// Puts the reference angle back as zero.
fn full_angles(case: &GridCase, x: &[f64]) -> Vec<f64> {
    let mut theta = x.to_vec();
    theta.insert(case.slack(), 0.0);
    theta
}

pub fn se_baddata(run: &mut Run, path: &Path, meas: &Path, lnrt: f64, alpha: f64) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let meas = run.parse(meas, MeasurementSet::from_json)?;
    meas.validate(&case)?;
    let w = whitened(&case, &meas)?;
    let rep = bad_data_scan(
        &w.h,
        &w.z,
        BadDataOptions {
            alpha,
            lnrt_threshold: lnrt,
        },
    )?;
    let theta = full_angles(&case, &rep.result.x);
    run.write_csv(
        "theta.csv",
        &["bus", "theta"],
        bus_ids(&case)
            .iter()
            .zip(&theta)
            .map(|(id, t)| [id.to_string(), num(*t)]),
    )?;
    let removed: Vec<usize> = rep.removed.iter().map(|&r| w.index[r]).collect();
    Outcome::ok(&json!({
        "readings_used": w.index.len(),
        "chi2_detected": rep.chi2_detected,
        "chi2_statistic": rep.chi2_statistic,
        "chi2_threshold": rep.chi2_threshold,
        "removed": removed,
        "halted": rep.halted,
        "objective": rep.result.objective,
        "theta": theta,
    }))
}

pub fn se_observe(run: &mut Run, path: &Path, meas: &Path) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let meas = run.parse(meas, MeasurementSet::from_json)?;
    meas.validate(&case)?;
    let (dc_meas, _) = active(&meas);
    let (h, _, _) = dc_design(&case, &dc_meas)?;
    let numerical = observability_numerical(&h, build_dc(&case).incidence())?;
    let topological = observability_topological(&case, &dc_meas)?;
    let ids = bus_ids(&case);
    let by_id = |islands: &[Vec<usize>]| -> Vec<Vec<usize>> {
        islands
            .iter()
            .map(|isl| isl.iter().map(|&b| ids[b]).collect())
            .collect()
    };
    Outcome::ok(&json!({
        "observable": numerical.observable,
        "agree": numerical.islands == topological.islands,
        "numerical": {"observable": numerical.observable, "islands": by_id(&numerical.islands)},
        "topological": {
            "observable": topological.observable,
            "islands": by_id(&topological.islands),
            "tree_branches": topological.branches,
        },
    }))
}

pub fn se_attack(
    run: &mut Run,
    path: &Path,
    meas_path: &Path,
    shift: Option<&Path>,
    scale: f64,
    seed: u64,
) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let meas = run.parse(meas_path, MeasurementSet::from_json)?;
    meas.validate(&case)?;
    let w = whitened(&case, &meas)?;
    let n = case.n_bus() - 1;
    let c = match shift {
        Some(p) => {
            let value: Value = run.json(p)?;
            if value.is_object() {
                let mut full = bus_values(&case, value, p)?;
                full.remove(case.slack());
                full
            } else {
                serde_json::from_value::<Vec<f64>>(value).map_err(|source| CliError::Json {
                    path: p.to_path_buf(),
                    source,
                })?
            }
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| rng.random_range(-scale..=scale)).collect()
        }
    };
    let atk = build_attack(&w.h, &DVector::from_vec(c))?;
    let a = DVector::from_column_slice(&atk.a);
    let before = dc_linear_se(&w.h, &w.z)?;
    let after = dc_linear_se(&w.h, &(&w.z + &a))?;
    let residual_change = before
        .residuals
        .iter()
        .zip(&after.residuals)
        .map(|(r0, r1)| (r0 - r1).abs())
        .fold(0.0, f64::max);
    let shift_error = (0..n)
        .map(|i| (after.x[i] - before.x[i] - atk.c[i]).abs())
        .fold(0.0, f64::max);
    let scan = bad_data_scan(&w.h, &(&w.z + &a), BadDataOptions::default())?;

    let mut attacked = meas.clone();
    for (row, &i) in w.index.iter().enumerate() {
        if let MeasValue::Real(v) = &mut attacked.measurements[i].value {
            *v += atk.a[row] * w.sigma[row];
        }
    }
    run.write_text("attacked.json", &attacked.to_json())?;
    let raw: Vec<f64> = (0..w.h_full.nrows()).map(|r| atk.a[r] * w.sigma[r]).collect();
    let altered: Vec<usize> = w
        .index
        .iter()
        .zip(&atk.a)
        .filter(|(_, v)| v.abs() > 1e-12 * a.amax())
        .map(|(i, _)| *i)
        .collect();
    Outcome::ok(&json!({
        "shift": full_angles(&case, &atk.c),
        "injected": raw,
        "altered_readings": altered,
        "support": atk.support,
        "residual_change": residual_change,
        "shift_error": shift_error,
        "detected": scan.chi2_detected || !scan.removed.is_empty(),
    }))
}

pub enum Event {
    Measured {
        pre: PathBuf,
        post: PathBuf,
    },
    Simulated {
        lines: Vec<usize>,
        injections: Option<PathBuf>,
    },
}

pub enum OutageMethod {
    Omp { k: Option<usize>, residual: Option<f64> },
    Exhaustive(usize),
}

pub fn outage(
    run: &mut Run,
    path: &Path,
    event: Event,
    observed: Option<&[usize]>,
    noise: Option<(f64, u64)>,
    method: OutageMethod,
) -> CliResult<Outcome> {
    let case = run.case(path)?;
    let (pre, post) = match &event {
        Event::Measured { pre, post } => (bus_vector(run, &case, pre)?, bus_vector(run, &case, post)?),
        Event::Simulated { lines, injections: inj } => {
            if let Some(&l) = lines.iter().find(|&&l| l >= case.n_branch()) {
                return Err(CliError::Invalid(format!("branch {l} out of range")));
            }
            let p = injections(run, &case, inj.as_deref())?;
            simulate_outage(&case, &p, lines)?
        }
    };
    let mut internal: Vec<usize> = match observed {
        Some(ids) => ids
            .iter()
            .map(|&id| case.bus_index(id))
            .collect::<gridsp::Result<_>>()?,
        None => (0..case.n_bus()).collect(),
    };
    if !internal.contains(&case.slack()) {
        internal.push(case.slack());
    }
    internal.sort_unstable();
    internal.dedup();
    let dc = build_dc(&case);
    let mut model = build_outage_model(&dc, &pre, &post, &internal)?;
    if let Some((snr, seed)) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        model.add_injection_noise(&dc, snr, &mut rng)?;
    }
    let (name, est) = match method {
        OutageMethod::Omp { k, residual } => {
            let stop = match (k, residual) {
                (Some(k), _) => OmpStop::Sparsity(k),
                (None, Some(r)) => OmpStop::Residual(r),
                (None, None) => OmpStop::Residual(1e-6 * (1.0 + model.observation.norm())),
            };
            ("omp", identify_omp(&model, stop))
        }
        OutageMethod::Exhaustive(k) => ("exhaustive", identify_exhaustive(&model, k)?),
    };
    let lines: Vec<Value> = est
        .lines
        .iter()
        .map(|&l| {
            let b = &case.branches()[l];
            json!({"branch": l, "from": b.from, "to": b.to})
        })
        .collect();
    let truth = match &event {
        Event::Simulated { lines, .. } => Some(lines.clone()),
        Event::Measured { .. } => None,
    };
    Outcome::ok(&json!({
        "method": name,
        "outaged": lines,
        "estimate": est,
        "simulated": truth,
    }))
}

fn record(run: &mut Run, path: &Path, f0: f64) -> CliResult<WaveRecord> {
    run.parse(path, |text| WaveRecord::from_csv(text, f0))
}

pub fn signal_phasor(run: &mut Run, path: &Path, f0: f64, start: usize, len: Option<usize>) -> CliResult<Outcome> {
    let rec = record(run, path, f0)?;
    let len = len.unwrap_or_else(|| rec.samples_per_cycle().round() as usize);
    let ph = estimate_phasor(&rec, start..start + len)?;
    Outcome::ok(&json!({
        "fs": rec.fs,
        "window": [start, start + len],
        "re": ph.re,
        "im": ph.im,
        "magnitude": ph.norm(),
        "angle": ph.arg(),
    }))
}

pub fn signal_modes(run: &mut Run, path: &Path, order: usize) -> CliResult<Outcome> {
    let (t, x) = run.parse(path, gridsp::signals::read_time_series)?;
    let fs = gridsp::signals::sample_rate(&t)?;
    let modes = prony_modes(&x, fs, order)?;
    run.write_csv(
        "modes.csv",
        &["frequency_hz", "decay_rate", "damping_ratio", "amplitude", "phase"],
        modes.modes.iter().map(|m| {
            [
                num(m.frequency_hz),
                num(m.decay_rate),
                num(m.damping_ratio),
                num(m.amplitude),
                num(m.phase),
            ]
        }),
    )?;
    Outcome::ok(&json!({"fs": fs, "order": order, "modes": modes.modes}))
}
