use crate::error::{GridError, Result};

/// Root of a scalar function on a bracketing interval.
///
/// Stops when the bracket is narrower than `tol`; the midpoint is returned.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (lo.min(hi), lo.max(hi));
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(GridError::InvalidInput(format!(
            "bisection bracket [{lo}, {hi}] does not change sign"
        )));
    }
    for _ in 0..300 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `a / (b + k)`
    Diminishing {
        a: f64,
        b: f64,
    },
    Constant(f64),
    /// `a / (b + k)` applied to the unit-norm subgradient direction.
    Normalized {
        a: f64,
        b: f64,
    },
}

impl StepRule {
    fn step(&self, k: usize, g_norm: f64) -> f64 {
        match *self {
            StepRule::Diminishing { a, b } => a / (b + k as f64),
            StepRule::Constant(a) => a,
            StepRule::Normalized { a, b } => {
                if g_norm > 0.0 {
                    a / (b + k as f64) / g_norm
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientOptions {
    pub step: StepRule,
    pub max_iter: usize,
    /// Componentwise lower bound for the multipliers (projection).
    pub lower: Option<f64>,
    /// Stop once every multiplier moves less than this in one update.
    pub move_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgradientResult {
    pub lambda: Vec<f64>,
    pub value: f64,
    pub last_lambda: Vec<f64>,
    /// Best value seen after each oracle call.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

/// Projected supergradient ascent on a concave function.
///
/// `oracle(λ)` returns the function value and a supergradient at `λ`.
pub fn subgradient_max<F>(mut oracle: F, lambda0: Vec<f64>, opts: &SubgradientOptions) -> SubgradientResult
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let mut lambda = lambda0;
    if let Some(lb) = opts.lower {
        lambda.iter_mut().for_each(|l| *l = l.max(lb));
    }
    let mut best = (f64::NEG_INFINITY, lambda.clone());
    let mut trace = Vec::with_capacity(opts.max_iter);
    let mut iterations = 0;
    for k in 0..opts.max_iter {
        let (value, g) = oracle(&lambda);
        iterations = k + 1;
        if value > best.0 {
            best = (value, lambda.clone());
        }
        trace.push(best.0);
        let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let step = opts.step.step(k, g_norm);
        let mut moved = 0.0_f64;
        for (l, gi) in lambda.iter_mut().zip(&g) {
            let mut next = *l + step * gi;
            if let Some(lb) = opts.lower {
                next = next.max(lb);
            }
            moved = moved.max((next - *l).abs());
            *l = next;
        }
        if opts.move_tol.is_some_and(|t| moved < t) {
            break;
        }
    }
    SubgradientResult {
        lambda: best.1,
        value: best.0,
        last_lambda: lambda,
        trace,
        iterations,
    }
}
