//! Small nonlinear least-squares and 1D search routines shared by the
//! localization, calibration and aberration code.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit did not converge within {iterations} iterations")]
    NonConvergence { iterations: usize },
    #[error("residual function returned a non-finite value")]
    NonFinite,
    #[error("{residuals} residuals cannot determine {params} parameters")]
    Underdetermined { residuals: usize, params: usize },
    #[error("residual function returned {got} values, expected {expected}")]
    ResidualLength { expected: usize, got: usize },
    #[error("search interval [{lo}, {hi}] is empty or not finite")]
    InvalidInterval { lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop when a step reduces the sum of squares by less than this fraction.
    pub ftol: f64,
    /// Stop when every step component is below `xtol·(|x|+xtol)`.
    pub xtol: f64,
    /// Stop when the gradient infinity-norm falls below this value.
    pub gtol: f64,
    /// Relative central-difference step.
    pub fd_step: f64,
    /// Per-parameter floor on the difference step scale; defaults to 1.
    pub typical_scale: Option<Vec<f64>>,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { max_iterations: 200, ftol: 1e-14, xtol: 1e-12, gtol: 1e-14, fd_step: 1e-6, typical_scale: None }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub residuals: Vec<f64>,
    /// Sum of squared residuals at the optimum.
    pub ssr: f64,
    pub iterations: usize,
    /// `(JᵀJ)⁻¹·SSR/(m−p)`; `None` when `m == p` or `JᵀJ` is singular.
    pub covariance: Option<DMatrix<f64>>,
}

impl LmReport {
    /// One-sigma parameter uncertainties from the covariance diagonal.
    pub fn std_errors(&self) -> Option<Vec<f64>> {
        self.covariance.as_ref().map(|c| (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect())
    }

    pub fn mean_squared_residual(&self) -> f64 {
        self.ssr / self.residuals.len() as f64
    }
}

fn evaluate<F>(f: &F, x: &[f64], m: usize) -> Result<DVector<f64>, FitError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let r = f(x);
    if r.len() != m {
        return Err(FitError::ResidualLength { expected: m, got: r.len() });
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    Ok(DVector::from_vec(r))
}

fn jacobian<F>(f: &F, x: &[f64], m: usize, cfg: &LmConfig) -> Result<DMatrix<f64>, FitError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x.len();
    let mut jac = DMatrix::zeros(m, p);
    let mut probe = x.to_vec();
    for k in 0..p {
        let typical = cfg.typical_scale.as_ref().map_or(1.0, |t| t[k]);
        let h = cfg.fd_step * x[k].abs().max(typical);
        probe[k] = x[k] + h;
        let up = evaluate(f, &probe, m)?;
        probe[k] = x[k] - h;
        let down = evaluate(f, &probe, m)?;
        probe[k] = x[k];
        jac.set_column(k, &((up - down) / (2.0 * h)));
    }
    Ok(jac)
}

/// Minimize `Σ r_i(x)²` with a Marquardt-scaled Levenberg–Marquardt
/// iteration and a central-difference Jacobian.
pub fn levenberg_marquardt<F>(f: F, x0: &[f64], cfg: &LmConfig) -> Result<LmReport, FitError>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let p = x0.len();
    let r0 = f(x0);
    let m = r0.len();
    if m < p || p == 0 {
        return Err(FitError::Underdetermined { residuals: m, params: p });
    }
    let mut x = x0.to_vec();
    let mut r = evaluate(&f, &x, m)?;
    let mut ssr = r.norm_squared();
    let mut lambda = 1e-3;
    let mut jac = jacobian(&f, &x, m, cfg)?;

    for iteration in 1..=cfg.max_iterations {
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.amax() <= cfg.gtol || ssr == 0.0 {
            return Ok(finish(x, r, ssr, iteration, &jtj, m, p));
        }
        let diag_floor = 1e-12 * jtj.diagonal().amax().max(f64::MIN_POSITIVE);
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for i in 0..p {
                a[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-&grad))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_r = match evaluate(&f, &trial, m) {
                Ok(v) => v,
                Err(FitError::NonFinite) => {
                    lambda *= 10.0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let trial_ssr = trial_r.norm_squared();
            if trial_ssr < ssr {
                let small_step = step.iter().zip(&x).all(|(s, xi)| s.abs() <= cfg.xtol * (xi.abs() + cfg.xtol));
                let small_gain = ssr - trial_ssr <= cfg.ftol * ssr;
                x = trial;
                r = trial_r;
                ssr = trial_ssr;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small_step || small_gain {
                    let jac = jacobian(&f, &x, m, cfg)?;
                    let jtj = jac.transpose() * &jac;
                    return Ok(finish(x, r, ssr, iteration, &jtj, m, p));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // No descent direction left at machine precision.
            return Ok(finish(x, r, ssr, iteration, &jtj, m, p));
        }
        jac = jacobian(&f, &x, m, cfg)?;
    }
    Err(FitError::NonConvergence { iterations: cfg.max_iterations })
}

fn finish(
    params: Vec<f64>,
    residuals: DVector<f64>,
    ssr: f64,
    iterations: usize,
    jtj: &DMatrix<f64>,
    m: usize,
    p: usize,
) -> LmReport {
    let covariance = if m > p { jtj.clone().try_inverse().map(|inv| inv * (ssr / (m - p) as f64)) } else { None };
    LmReport { params, residuals: residuals.as_slice().to_vec(), ssr, iterations, covariance }
}

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
pub fn golden_section_max<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<(f64, f64), FitError>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(FitError::InvalidInterval { lo, hi });
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx.is_finite() {
        Ok((x, fx))
    } else {
        Err(FitError::NonFinite)
    }
}

/// Maximize a sampled function by parabolic interpolation through the
/// largest sample and its neighbours. Returns the fractional index.
pub fn parabolic_peak(samples: &[f64], index: usize) -> f64 {
    if index == 0 || index + 1 >= samples.len() {
        return index as f64;
    }
    let (a, b, c) = (samples[index - 1], samples[index], samples[index + 1]);
    let denom = a - 2.0 * b + c;
    if denom >= 0.0 {
        return index as f64;
    }
    index as f64 + 0.5 * (a - c) / denom
}
