use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

use gridsp::commitment::{uc_bruteforce, uc_lagrangian, UcInstance, UcOptions};
use gridsp::dispatch::{dc_opf, economic_dispatch, GenOffer};
use gridsp::estimation::{
    bad_data_scan, dc_design, reduce_and_whiten, wls_gauss_newton, BadDataOptions, MeasurementSet, WlsOptions,
};
use gridsp::flexload::{dr_solve, pev_central, pev_distributed, DrInstance, DrMode, DrOptions, PevFleet};
use gridsp::netmodel::{build_dc, parse_case, GridCase};
use gridsp::outage::{build_outage_model, identify_exhaustive, identify_omp, OmpStop};
use gridsp::powerflow::{solve_ac, solve_dc, AcOptions, PfEntry, PfSpec};
use gridsp::signals::{estimate_phasor, prony_modes, WaveRecord};

create_exception!(pygridsp, GridError, PyException);

fn err(e: impl std::fmt::Display) -> PyErr {
    GridError::new_err(e.to_string())
}

/// Serializes through JSON into plain Python dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A validated network case.
#[pyclass(module = "pygridsp", frozen)]
struct Case {
    inner: GridCase,
}

#[pymethods]
impl Case {
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_case(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| err(format!("{path}: {e}")))?;
        Self::new(&text)
    }

    #[getter]
    fn n_bus(&self) -> usize {
        self.inner.n_bus()
    }

    #[getter]
    fn n_branch(&self) -> usize {
        self.inner.n_branch()
    }

    #[getter]
    fn bus_ids(&self) -> Vec<usize> {
        self.inner.buses().iter().map(|b| b.id).collect()
    }

    /// Position of the slack bus.
    #[getter]
    fn slack(&self) -> usize {
        self.inner.slack()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// DC angles for net injections in bus order; `reference` is a bus position.
    #[pyo3(signature = (injections, reference=None))]
    fn dc_power_flow(&self, injections: Vec<f64>, reference: Option<usize>) -> PyResult<Vec<f64>> {
        let dc = build_dc(&self.inner);
        solve_dc(&dc, &injections, reference.unwrap_or(self.inner.slack())).map_err(err)
    }

    /// Newton-Raphson from a JSON list of bus entries.
    #[pyo3(signature = (spec, tol=1e-8, max_iter=20))]
    fn ac_power_flow<'py>(
        &self,
        py: Python<'py>,
        spec: &str,
        tol: f64,
        max_iter: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let entries: Vec<PfEntry> = serde_json::from_str(spec).map_err(err)?;
        let spec = PfSpec::from_entries(&self.inner, &entries).map_err(err)?;
        to_py(
            py,
            &solve_ac(&self.inner, &spec, AcOptions { tol, max_iter }).map_err(err)?,
        )
    }

    fn __repr__(&self) -> String {
        format!("Case(buses={}, branches={})", self.inner.n_bus(), self.inner.n_branch())
    }
}

#[pyfunction]
#[pyo3(signature = (case, measurements, tol=1e-10, max_iter=30))]
fn estimate_state<'py>(
    py: Python<'py>,
    case: &Case,
    measurements: &str,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let meas = MeasurementSet::from_json(measurements).map_err(err)?;
    to_py(
        py,
        &wls_gauss_newton(&case.inner, &meas, None, WlsOptions { tol, max_iter }).map_err(err)?,
    )
}

/// Bad-data scan on the active readings of a measurement set; indices in
/// the report count only those readings.
#[pyfunction]
#[pyo3(signature = (case, measurements, lnrt=3.0, alpha=0.01))]
fn bad_data<'py>(
    py: Python<'py>,
    case: &Case,
    measurements: &str,
    lnrt: f64,
    alpha: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let meas = MeasurementSet::from_json(measurements).map_err(err)?;
    let (h, z, sigma) = dc_design(&case.inner, &meas).map_err(err)?;
    let (h, z) = reduce_and_whiten(&h, &z, &sigma, case.inner.slack());
    let opts = BadDataOptions {
        alpha,
        lnrt_threshold: lnrt,
    };
    to_py(py, &bad_data_scan(&h, &z, opts).map_err(err)?)
}

/// Outaged branch positions from pre- and post-event angles (all buses observed).
#[pyfunction]
#[pyo3(signature = (case, pre, post, k=None, exhaustive=false))]
fn identify_outage<'py>(
    py: Python<'py>,
    case: &Case,
    pre: Vec<f64>,
    post: Vec<f64>,
    k: Option<usize>,
    exhaustive: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let dc = build_dc(&case.inner);
    let all: Vec<usize> = (0..case.inner.n_bus()).collect();
    let model = build_outage_model(&dc, &pre, &post, &all).map_err(err)?;
    let est = if exhaustive {
        identify_exhaustive(&model, k.unwrap_or(1)).map_err(err)?
    } else {
        let stop = match k {
            Some(k) => OmpStop::Sparsity(k),
            None => OmpStop::Residual(1e-6 * (1.0 + model.observation.norm())),
        };
        identify_omp(&model, stop)
    };
    to_py(py, &est)
}

/// Fundamental phasor of `samples[start:start+length]` as a complex number.
#[pyfunction]
fn phasor(samples: Vec<f64>, fs: f64, f0: f64, start: usize, length: usize) -> PyResult<(f64, f64)> {
    let rec = WaveRecord::new(samples, fs, f0).map_err(err)?;
    let ph = estimate_phasor(&rec, start..start + length).map_err(err)?;
    Ok((ph.re, ph.im))
}

#[pyfunction]
fn prony<'py>(py: Python<'py>, samples: Vec<f64>, fs: f64, order: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &prony_modes(&samples, fs, order).map_err(err)?.modes)
}

/// Single-bus dispatch from a JSON list of offers.
#[pyfunction]
#[pyo3(signature = (offers, demand, wind_forecast=None))]
fn dispatch<'py>(
    py: Python<'py>,
    offers: &str,
    demand: f64,
    wind_forecast: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let offers: Vec<GenOffer> = serde_json::from_str(offers).map_err(err)?;
    to_py(py, &economic_dispatch(&offers, demand, wind_forecast).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (case, angle_penalty=0.0))]
fn opf<'py>(py: Python<'py>, case: &Case, angle_penalty: f64) -> PyResult<Bound<'py, PyAny>> {
    let offers = GenOffer::from_case(&case.inner);
    to_py(py, &dc_opf(&case.inner, &offers, angle_penalty).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (instance, iterations=500, bruteforce=false))]
fn commit<'py>(py: Python<'py>, instance: &str, iterations: usize, bruteforce: bool) -> PyResult<Bound<'py, PyAny>> {
    let inst = UcInstance::from_json(instance).map_err(err)?;
    let sched = if bruteforce {
        uc_bruteforce(&inst)
    } else {
        uc_lagrangian(
            &inst,
            &UcOptions {
                iterations,
                ..UcOptions::default()
            },
        )
    };
    to_py(py, &sched.map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (instance, dual=true, max_iter=20000, step=None))]
fn demand_response<'py>(
    py: Python<'py>,
    instance: &str,
    dual: bool,
    max_iter: usize,
    step: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let inst = DrInstance::from_json(instance).map_err(err)?;
    let mode = if dual { DrMode::Dual } else { DrMode::Central };
    let opts = DrOptions {
        max_iter,
        step,
        ..DrOptions::default()
    };
    // Long dual runs release the interpreter.
    let sol = py.detach(|| dr_solve(&inst, mode, &opts)).map_err(err)?;
    to_py(py, &sol)
}

#[pyfunction]
#[pyo3(signature = (fleet, distributed=true, max_iter=500, tol=1e-6))]
fn charge<'py>(
    py: Python<'py>,
    fleet: &str,
    distributed: bool,
    max_iter: usize,
    tol: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let fleet = PevFleet::from_json(fleet).map_err(err)?;
    let sol = py.detach(|| {
        if distributed {
            pev_distributed(&fleet, max_iter, tol)
        } else {
            pev_central(&fleet)
        }
    });
    to_py(py, &sol.map_err(err)?)
}

#[pymodule]
fn pygridsp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GridError", m.py().get_type::<GridError>())?;
    m.add_class::<Case>()?;
    m.add_function(wrap_pyfunction!(estimate_state, m)?)?;
    m.add_function(wrap_pyfunction!(bad_data, m)?)?;
    m.add_function(wrap_pyfunction!(identify_outage, m)?)?;
    m.add_function(wrap_pyfunction!(phasor, m)?)?;
    m.add_function(wrap_pyfunction!(prony, m)?)?;
    m.add_function(wrap_pyfunction!(dispatch, m)?)?;
    m.add_function(wrap_pyfunction!(opf, m)?)?;
    m.add_function(wrap_pyfunction!(commit, m)?)?;
    m.add_function(wrap_pyfunction!(demand_response, m)?)?;
    m.add_function(wrap_pyfunction!(charge, m)?)?;
    Ok(())
}
