//! Classical (noise-free) Fisher information of transverse intensity
//! profiles with respect to the emitter coordinates.
//!
//! The normalized transverse intensity `f(x, y; η)` is treated as the
//! probability density of a detected photon's position, so
//! `I_η = ∫ (∂_η ln f)² f dA`. Values are per detected photon; for Poisson
//! sampling the information grows linearly with the photon number.
//!
//! Curves are reported in waist units: lateral and axial information are
//! both multiplied by `w0²`, which makes the fundamental-mode results
//! `I_x = 4/(1+z̃²)` and `I_z = 4(w0/zR)²·z̃²/(1+z̃²)²`.

use crate::lgmodes::{BeamGeometry, LgSuperposition};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FisherError {
    #[error("density integrates to {integral} on the sampling window (expected 1 within 1e-6)")]
    Normalization { integral: f64 },
    #[error("finite-difference estimate depends on the step: {fine} at h, {coarse} at 2h")]
    StepSensitivity { fine: f64, coarse: f64 },
    #[error("quadrature not converged: {coarse} vs {fine} after doubling the resolution")]
    NotConverged { coarse: f64, fine: f64 },
    #[error("z/zR = {0} lies outside [-2, 2]")]
    OutOfRange(f64),
    #[error("invalid quadrature options: {0}")]
    InvalidOptions(String),
}

/// Emitter coordinate the information refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordinate {
    X,
    Y,
    Z,
}

/// Square trapezoidal quadrature window and finite-difference step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FisherOptions {
    /// Half side length of the square window centered on the origin.
    pub half_width: f64,
    /// Samples per side (odd).
    pub samples: usize,
    /// Central-difference step in η.
    pub step: f64,
    /// Repeat the integral at doubled resolution and require < 0.1% change.
    pub check_convergence: bool,
}

const NORM_TOLERANCE: f64 = 1e-6;
const RICHARDSON_TOLERANCE: f64 = 0.01;
const CONVERGENCE_TOLERANCE: f64 = 1e-3;

impl FisherOptions {
    fn validate(&self) -> Result<(), FisherError> {
        if !(self.half_width > 0.0 && self.step > 0.0) || self.samples < 3 || self.samples.is_multiple_of(2) {
            return Err(FisherError::InvalidOptions(format!(
                "half width {}, step {}, {} samples",
                self.half_width, self.step, self.samples
            )));
        }
        Ok(())
    }
}

/// Trapezoidal sums of `f`, `(∂f/∂η)²/f` at step `h` and, if `richardson`,
/// at step `2h`.
fn integrals<F>(density: &F, eta0: f64, opts: &FisherOptions, samples: usize, richardson: bool) -> (f64, f64, f64)
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    let half = (samples - 1) / 2;
    let dx = opts.half_width / half as f64;
    let h = opts.step;
    let weight = |i: usize| if i == 0 || i + 1 == samples { 0.5 } else { 1.0 };
    // Row sums are collected and added in order so the result does not
    // depend on the thread count.
    let rows: Vec<(f64, f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let y = (i as f64 - half as f64) * dx;
            let mut acc = (0.0, 0.0, 0.0);
            for j in 0..samples {
                let x = (j as f64 - half as f64) * dx;
                let f = density(x, y, eta0);
                if !(f > 0.0) {
                    continue;
                }
                let d1 = (density(x, y, eta0 + h) - density(x, y, eta0 - h)) / (2.0 * h);
                let d2 = if richardson {
                    (density(x, y, eta0 + 2.0 * h) - density(x, y, eta0 - 2.0 * h)) / (4.0 * h)
                } else {
                    0.0
                };
                let w = weight(i) * weight(j);
                acc.0 += w * f;
                acc.1 += w * d1 * d1 / f;
                acc.2 += w * d2 * d2 / f;
            }
            acc
        })
        .collect();
    let (norm, fine, coarse) = rows.iter().fold((0.0, 0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let area = dx * dx;
    (norm * area, fine * area, coarse * area)
}

/// Fisher information of the family `density(x, y, η)` at `η = eta0`.
///
/// The density must integrate to 1 over the window. The derivative is a
/// central difference; the step-`2h` estimate must agree within 1%
/// (below an absolute floor of `1e-16/h²`, where both are numerically zero).
pub fn fisher_numeric<F>(density: F, eta0: f64, opts: &FisherOptions) -> Result<f64, FisherError>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    opts.validate()?;
    let (norm, fine, coarse) = integrals(&density, eta0, opts, opts.samples, true);
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        return Err(FisherError::Normalization { integral: norm });
    }
    let floor = 1e-16 / (opts.step * opts.step);
    if (fine - coarse).abs() > RICHARDSON_TOLERANCE * fine.abs().max(floor) {
        return Err(FisherError::StepSensitivity { fine, coarse });
    }
    if opts.check_convergence {
        let (_, refined, _) = integrals(&density, eta0, opts, 2 * opts.samples - 1, false);
        if (refined - fine).abs() > CONVERGENCE_TOLERANCE * refined.abs().max(floor) {
            return Err(FisherError::NotConverged { coarse: fine, fine: refined });
        }
        return Ok(refined);
    }
    Ok(fine)
}

/// Closed-form information of the fundamental Gaussian mode, in `w0⁻²`.
pub fn fisher_fundamental_analytic(geom: &BeamGeometry, eta: Coordinate, z: f64) -> f64 {
    let zt = z / geom.rayleigh_length();
    let q = 1.0 + zt * zt;
    match eta {
        Coordinate::X | Coordinate::Y => 4.0 / q,
        Coordinate::Z => {
            let ratio = geom.waist() / geom.rayleigh_length();
            4.0 * ratio * ratio * zt * zt / (q * q)
        }
    }
}

/// Information per coordinate along an axial grid, in `w0⁻²`.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherCurve {
    /// Axial positions (same length unit as the beam geometry).
    pub z_grid: Vec<f64>,
    pub i_x: Vec<f64>,
    pub i_y: Vec<f64>,
    pub i_z: Vec<f64>,
}

/// Default quadrature for a beam of local width `w`: a window of ±8w
/// sampled every w/32. Superpositions with intensity zeros make the
/// integrand discontinuous there, so the trapezoidal rule converges only
/// algebraically and a coarser grid misses the 0.1% convergence check.
pub fn default_options(width: f64, step: f64) -> FisherOptions {
    FisherOptions { half_width: 8.0 * width, samples: 513, step, check_convergence: true }
}

/// Information of `sup` with respect to x, y and z at axial position `z`,
/// in `w0⁻²`. Works in waist-scaled coordinates internally.
pub fn superposition_fisher(sup: &LgSuperposition, geom: &BeamGeometry, z: f64) -> Result<[f64; 3], FisherError> {
    let w0 = geom.waist();
    let scaled = BeamGeometry::new(1.0, geom.wavelength() / w0).expect("scaled geometry is valid");
    let zs = z / w0;
    let zr = scaled.rayleigh_length();
    let width = scaled.width(zs);
    let lateral = default_options(width, 1e-4);
    let axial = default_options(width, 1e-4 * zr);
    let ix = fisher_numeric(|x, y, x0| sup.intensity_xy(&scaled, x - x0, y, zs), 0.0, &lateral)?;
    let iy = fisher_numeric(|x, y, y0| sup.intensity_xy(&scaled, x, y - y0, zs), 0.0, &lateral)?;
    let iz = fisher_numeric(|x, y, zz| sup.intensity_xy(&scaled, x, y, zz), zs, &axial)?;
    Ok([ix, iy, iz])
}

/// Curves for `sup` over `z_grid`, which must stay within ±2 zR.
pub fn fisher_curve(sup: &LgSuperposition, geom: &BeamGeometry, z_grid: &[f64]) -> Result<FisherCurve, FisherError> {
    let zr = geom.rayleigh_length();
    if let Some(z) = z_grid.iter().find(|z| !(z.abs() <= 2.0 * zr * (1.0 + 1e-12))) {
        return Err(FisherError::OutOfRange(z / zr));
    }
    let mut curve = FisherCurve { z_grid: z_grid.to_vec(), i_x: vec![], i_y: vec![], i_z: vec![] };
    for &z in z_grid {
        let [ix, iy, iz] = superposition_fisher(sup, geom, z)?;
        curve.i_x.push(ix);
        curve.i_y.push(iy);
        curve.i_z.push(iz);
    }
    Ok(curve)
}

/// Curves for the double-helix superposition and for the fundamental mode.
pub fn fisher_curves_dh(geom: &BeamGeometry, z_grid: &[f64]) -> Result<(FisherCurve, FisherCurve), FisherError> {
    Ok((
        fisher_curve(&LgSuperposition::double_helix(), geom, z_grid)?,
        fisher_curve(&LgSuperposition::fundamental(), geom, z_grid)?,
    ))
}
