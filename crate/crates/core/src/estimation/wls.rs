use nalgebra::DVector;
use serde::Serialize;

use super::measurement::{measurement_jacobian, measurement_values, MeasPoint, MeasurementSet, PolarLayout};
use crate::error::{GridError, Result};
use crate::linalg::{lstsq_full_rank, numerical_rank};
use crate::netmodel::{build_admittance, ComplexState, GridCase};

/// Outcome of an estimation run. Residuals are whitened (`(z − h)/σ`), so
/// `objective = ‖residuals‖²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimationResult {
    /// Estimated unknowns: reduced angles for the linear model, the polar
    /// layout (non-slack angles, then all magnitudes) for the nonlinear one.
    pub x: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub voltages: Option<ComplexState>,
    pub residuals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Original indices of readings dropped as bad data.
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for WlsOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 30,
        }
    }
}

/// Nonlinear weighted least squares by Gauss–Newton on the polar state.
/// The slack angle stays at its initial value (zero for a flat start).
pub fn wls_gauss_newton(
    case: &GridCase,
    meas: &MeasurementSet,
    init: Option<&ComplexState>,
    opts: WlsOptions,
) -> Result<EstimationResult> {
    meas.validate(case)?;
    let layout = PolarLayout::new(case);
    let n = layout.len();
    let m = meas.n_rows();
    if m < n {
        return Err(GridError::RankDeficient { rank: m, needed: n });
    }
    let model = build_admittance(case);
    let points: Vec<MeasPoint> = meas.measurements.iter().map(|x| x.point()).collect();
    let z = meas.z();
    let w = meas.sigmas().map(|s| 1.0 / s);
    let start = init.cloned().unwrap_or_else(|| ComplexState::flat(case.n_bus()));
    if start.len() != case.n_bus() {
        return Err(GridError::DimensionMismatch {
            what: "initial state",
            expected: case.n_bus(),
            got: start.len(),
        });
    }
    let slack_angle = start.angles()[layout.slack];
    let mut x = layout.pack(&start);
    let mut iterations = 0;
    let mut converged = false;
    let residual = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let h = measurement_values(case, &model, &points, &layout.unpack(x, slack_angle))?;
        Ok((&z - h).component_mul(&w))
    };
    let mut r = residual(&x)?;
    while iterations < opts.max_iter {
        let state = layout.unpack(&x, slack_angle);
        let mut jac = measurement_jacobian(case, &model, &points, &layout, &state.phasors())?;
        for (row, wi) in w.iter().enumerate() {
            jac.row_mut(row).scale_mut(*wi);
        }
        if iterations == 0 {
            let rank = numerical_rank(&jac);
            if rank < n {
                return Err(GridError::RankDeficient { rank, needed: n });
            }
        }
        let dx = lstsq_full_rank(&jac, &r)?;
        x += &dx;
        iterations += 1;
        r = residual(&x)?;
        let step = dx.amax();
        if !step.is_finite() || step > 1e6 {
            break;
        }
        if step < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(EstimationResult {
        voltages: Some(layout.unpack(&x, slack_angle)),
        objective: r.norm_squared(),
        residuals: r.iter().copied().collect(),
        x: x.iter().copied().collect(),
        iterations,
        converged,
        removed: Vec::new(),
    })
}
