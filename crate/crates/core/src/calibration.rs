//! Angle-to-depth calibration from focus-shifted image pairs, post-selection
//! of atoms that did not hop, and the spatial-frequency spectrum of the
//! reconstructed depths.
//!
//! A holographic lens moves the focal plane by a known `Δz`. An atom whose
//! unshifted angle is `θ` then appears at
//! `θ_s = V·atan(tan((θ − α)/V) − Δz/zR) + α`.
//! Fitting many `(θ, θ_s, Δz)` records for `(zR, α)` calibrates the rotation
//! law without knowing any atom's absolute depth.

use crate::angle::{orientation_difference, orientation_distance, wrap_half_turn};
use crate::fit::{levenberg_marquardt, FitError, LmConfig};
use crate::lgmodes::RotationLaw;
use crate::localization::{localize_frame, PipelineConfig};
use crate::optics::GridSpec;
use crate::synth::{expected_frame, Atom, AtomSet, PsfProvider};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use rustfft::FftPlanner;
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("angle offset (θ − α)/V = {0:.4} rad lies outside (−π/2, π/2)")]
    Domain(f64),
    #[error("every record has Δz = 0, which leaves zR and α unidentifiable")]
    Unidentifiable,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Angle of an atom after the focal plane moved by `delta_z`.
pub fn shifted_angle_model(theta: f64, delta_z: f64, zr: f64, alpha: f64, v: f64) -> Result<f64, CalibrationError> {
    let x = (theta - alpha) / v;
    if !(x.abs() < FRAC_PI_2) {
        return Err(CalibrationError::Domain(x));
    }
    Ok(v * (x.tan() - delta_z / zr).atan() + alpha)
}

/// The model applied to measured angles, which are only known modulo π:
/// the offset `θ − α` is taken on its principal branch `[−π/2, π/2)`.
fn shifted_angle_wrapped(theta: f64, delta_z: f64, zr: f64, alpha: f64, v: f64) -> f64 {
    let x = wrap_half_turn(theta - alpha) / v;
    v * (x.tan() - delta_z / zr).atan() + alpha
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnglePair {
    pub theta: f64,
    pub theta_shifted: f64,
    pub delta_z: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnglePairDataset {
    pub records: Vec<AnglePair>,
}

impl AnglePairDataset {
    /// Distinct `Δz` values with their record counts, ascending.
    pub fn groups(&self) -> Vec<(f64, usize)> {
        let mut dz: Vec<f64> = self.records.iter().map(|r| r.delta_z).collect();
        dz.sort_by(f64::total_cmp);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for d in dz {
            match out.last_mut() {
                Some((last, n)) if *last == d => *n += 1,
                _ => out.push((d, 1)),
            }
        }
        out
    }
}

/// Draw a dataset from the model: `n_per_group` atoms per shift, true depths
/// uniform on lattice planes `k·plane_spacing` with `|k| ≤ max_plane`, and
/// independent Gaussian noise of `sigma` on both measured angles.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_dataset(
    law: &RotationLaw,
    shifts: &[f64],
    n_per_group: usize,
    plane_spacing: f64,
    max_plane: i64,
    sigma: f64,
    seed: u64,
) -> Result<AnglePairDataset, CalibrationError> {
    if !(sigma >= 0.0) || !(plane_spacing > 0.0) || max_plane < 0 {
        return Err(CalibrationError::InvalidInput("sigma, plane spacing and plane range must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes =
        Uniform::new_inclusive(-max_plane, max_plane).map_err(|e| CalibrationError::InvalidInput(e.to_string()))?;
    let noise = Normal::new(0.0, sigma).map_err(|e| CalibrationError::InvalidInput(e.to_string()))?;
    let mut records = Vec::with_capacity(shifts.len() * n_per_group);
    for &delta_z in shifts {
        for _ in 0..n_per_group {
            let z = planes.sample(&mut rng) as f64 * plane_spacing;
            let theta = law.rotation_angle(z) + noise.sample(&mut rng);
            let theta_shifted = law.rotation_angle(z - delta_z) + noise.sample(&mut rng);
            records.push(AnglePair {
                theta: wrap_half_turn(theta),
                theta_shifted: wrap_half_turn(theta_shifted),
                delta_z,
            });
        }
    }
    Ok(AnglePairDataset { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub zr: f64,
    /// In-focus angle offset, in `[−π/2, π/2)`.
    pub alpha: f64,
    pub v: f64,
    /// Mean squared angle residual (deg²).
    pub mse_deg2: f64,
    pub sigma_zr: f64,
    pub sigma_alpha: f64,
    pub records: usize,
    pub iterations: usize,
}

impl CalibrationResult {
    pub fn law(&self) -> RotationLaw {
        RotationLaw { rate: self.v, rayleigh_length: self.zr, alpha: self.alpha }
    }
}

/// Joint least-squares fit of `(zR, α)` over all records, with `V` fixed
/// and each `Δz` taken as exact. Residuals are angle differences modulo π.
pub fn fit_calibration(data: &AnglePairDataset, v: f64) -> Result<CalibrationResult, CalibrationError> {
    if data.records.is_empty() {
        return Err(CalibrationError::InvalidInput("empty dataset".into()));
    }
    if !(v > 0.0) {
        return Err(CalibrationError::InvalidInput(format!("rotation rate must be positive, got {v}")));
    }
    let max_shift = data.records.iter().map(|r| r.delta_z.abs()).fold(0.0, f64::max);
    if max_shift == 0.0 {
        return Err(CalibrationError::Unidentifiable);
    }
    // Work in units of the largest shift so both parameters are O(1).
    let residuals = |p: &[f64]| -> Vec<f64> {
        data.records
            .iter()
            .map(|r| {
                let model = shifted_angle_wrapped(r.theta, r.delta_z / max_shift, p[0], p[1], v);
                orientation_difference(r.theta_shifted, model)
            })
            .collect()
    };
    let ssr = |p: &[f64]| residuals(p).iter().map(|r| r * r).sum::<f64>();
    // coarse start: α on a 5° grid, zR log-spaced from 0.1 to 1000 shifts
    let mut start = [1.0, 0.0];
    let mut best = f64::INFINITY;
    for i in 0..36 {
        let alpha = -FRAC_PI_2 + i as f64 * PI / 36.0;
        for j in 0..=40 {
            let zr = 10f64.powf(-1.0 + j as f64 * 0.1);
            let s = ssr(&[zr, alpha]);
            if s < best {
                best = s;
                start = [zr, alpha];
            }
        }
    }
    let cfg = LmConfig { typical_scale: Some(vec![1.0, 1.0]), ..LmConfig::default() };
    let report = levenberg_marquardt(residuals, &start, &cfg)?;
    let zr = report.params[0] * max_shift;
    if !(zr > 0.0) {
        return Err(FitError::NonFinite.into());
    }
    let se = report.std_errors().unwrap_or_else(|| vec![f64::NAN; 2]);
    Ok(CalibrationResult {
        zr,
        alpha: wrap_half_turn(report.params[1]),
        v,
        mse_deg2: report.mean_squared_residual() * (180.0 / PI).powi(2),
        sigma_zr: se[0] * max_shift,
        sigma_alpha: se[1],
        records: data.records.len(),
        iterations: report.iterations,
    })
}

/// Keep an atom only if its first and third images, taken at the same
/// focus, agree in angle to within `tol` (modulo π).
pub fn post_select(theta_1: f64, theta_3: f64, tol: f64) -> bool {
    orientation_distance(theta_1, theta_3) <= tol
}

/// Fit of the rotation law to a measured angle-versus-depth curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationFit {
    pub law: RotationLaw,
    /// RMS angle residual (rad).
    pub rms: f64,
    /// One-sigma uncertainties of `(V, zR, α)`; `V` is 0 when held fixed.
    pub std_errors: [f64; 3],
    pub residuals: Vec<f64>,
}

/// Least-squares fit of `θ(z) = V·atan(z/zR) + α` (angles modulo π). With
/// `fixed_rate = Some(V)` only `zR` and `α` are free.
pub fn fit_rotation_law(z: &[f64], theta: &[f64], fixed_rate: Option<f64>) -> Result<RotationFit, CalibrationError> {
    if z.len() != theta.len() || z.len() < 4 {
        return Err(CalibrationError::InvalidInput("need at least four (z, θ) samples of equal length".into()));
    }
    let scale = z.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if !(scale > 0.0) {
        return Err(CalibrationError::Unidentifiable);
    }
    let zs: Vec<f64> = z.iter().map(|v| v / scale).collect();
    // start: α from the sample nearest focus, zR from the mean slope
    let i0 = (0..zs.len()).min_by(|&a, &b| zs[a].abs().total_cmp(&zs[b].abs())).expect("non-empty");
    let alpha0 = theta[i0];
    let i1 = (0..zs.len()).max_by(|&a, &b| zs[a].abs().total_cmp(&zs[b].abs())).expect("non-empty");
    let slope = orientation_difference(theta[i1], alpha0) / (zs[i1] - zs[i0]);
    let v0 = fixed_rate.unwrap_or(2.0);
    let zr0 = if slope.abs() > 1e-6 { (v0 / slope).abs() } else { 10.0 };
    let model = |p: &[f64]| -> Vec<f64> {
        let (v, zr, alpha) = match fixed_rate {
            Some(v) => (v, p[0], p[1]),
            None => (p[0], p[1], p[2]),
        };
        zs.iter().zip(theta).map(|(z, t)| orientation_difference(*t, v * (z / zr).atan() + alpha)).collect()
    };
    let x0: Vec<f64> = match fixed_rate {
        Some(_) => vec![zr0, alpha0],
        None => vec![v0, zr0, alpha0],
    };
    let report = levenberg_marquardt(model, &x0, &LmConfig::default())?;
    let se = report.std_errors().unwrap_or_else(|| vec![f64::NAN; x0.len()]);
    let (v, zr, alpha, std_errors) = match fixed_rate {
        Some(v) => (v, report.params[0], report.params[1], [0.0, se[0] * scale, se[1]]),
        None => (report.params[0], report.params[1], report.params[2], [se[0], se[1] * scale, se[2]]),
    };
    if !(zr > 0.0 && v > 0.0) {
        return Err(FitError::NonFinite.into());
    }
    Ok(RotationFit {
        law: RotationLaw { rate: v, rayleigh_length: zr * scale, alpha: wrap_half_turn(alpha) },
        rms: report.mean_squared_residual().sqrt(),
        std_errors,
        residuals: report.residuals,
    })
}

/// Rotation law of a PSF model as the localization pipeline sees it: one
/// noiseless emitter per frame at each depth in `z`, its angle from the
/// configured estimator, then [`fit_rotation_law`]. The probe frame is
/// wide enough that empty pixels dominate the robust noise estimate.
pub fn calibrate_from_psf(
    provider: &dyn PsfProvider,
    config: &PipelineConfig,
    z: &[f64],
    fixed_rate: Option<f64>,
) -> Result<RotationFit, crate::Error> {
    let n = 8 * config.crop_radius + 1;
    let fov = GridSpec::new(n, provider.pixel_size())?;
    let probe = RotationLaw { rate: 2.0, rayleigh_length: 1.0, alpha: 0.0 };
    let mut theta = Vec::with_capacity(z.len());
    for &depth in z {
        let atoms = AtomSet { atoms: vec![Atom { x: 0.0, y: 0.0, z: depth, site: None }] };
        let frame = expected_frame(&atoms, provider, 1e4, 0.0, &fov)?;
        let found = localize_frame(&frame, config, &probe)?;
        match found.detections.as_slice() {
            [d] => theta.push(d.theta),
            other => {
                return Err(CalibrationError::InvalidInput(format!(
                    "{} detections for a single emitter at z = {depth:e} m",
                    other.len()
                ))
                .into())
            }
        }
    }
    Ok(fit_rotation_law(z, &theta, fixed_rate)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumOptions {
    /// Histogram bin width in units of the plane spacing.
    pub bin_fraction: f64,
    /// Histogram range `[lo, hi]` (m). By default it extends half a plane
    /// beyond the outermost occupied plane and is offset by half a bin so
    /// that planes fall on bin centers.
    pub range: Option<(f64, f64)>,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self { bin_fraction: 0.125, range: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Spatial frequencies `ξ_z` (1/m), from 0 to Nyquist.
    pub frequencies: Vec<f64>,
    /// `|DFT|²` of the depth histogram.
    pub power: Vec<f64>,
    pub bin_width: f64,
}

impl Spectrum {
    /// Frequency of the strongest non-DC component. Exact ties (the equal
    /// harmonics of a perfect comb) resolve to the lowest frequency.
    pub fn peak_frequency(&self) -> Option<f64> {
        let max = self.power.iter().skip(1).copied().fold(f64::NEG_INFINITY, f64::max);
        (1..self.power.len()).find(|&k| self.power[k] >= max * (1.0 - 1e-9)).map(|k| self.frequencies[k])
    }

    /// Power at the bin nearest `xi`.
    pub fn power_at(&self, xi: f64) -> f64 {
        let k = (xi / self.frequencies.get(1).copied().unwrap_or(f64::INFINITY)).round() as usize;
        self.power.get(k).copied().unwrap_or(0.0)
    }

    /// Mean power over the non-DC bins, excluding the bin nearest `exclude`.
    pub fn background(&self, exclude: f64) -> f64 {
        let skip = (exclude / self.frequencies[1]).round() as usize;
        let vals: Vec<f64> = (1..self.power.len()).filter(|&k| k != skip).map(|k| self.power[k]).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }
}

/// One-sided power spectrum of the histogram of `z_values`.
pub fn lattice_spectrum(
    z_values: &[f64],
    plane_spacing: f64,
    options: &SpectrumOptions,
) -> Result<Spectrum, CalibrationError> {
    if z_values.len() < 2 {
        return Err(CalibrationError::InvalidInput("need at least two depths".into()));
    }
    if !(plane_spacing > 0.0 && options.bin_fraction > 0.0) || z_values.iter().any(|z| !z.is_finite()) {
        return Err(CalibrationError::InvalidInput(
            "plane spacing, bin width and depths must be finite and positive".into(),
        ));
    }
    let bin_width = options.bin_fraction * plane_spacing;
    let (lo, hi) = options.range.unwrap_or_else(|| {
        let reach = z_values.iter().map(|z| (z / plane_spacing).abs()).fold(0.0, f64::max);
        let half = (reach.round() + 0.5) * plane_spacing;
        (-half - bin_width / 2.0, half - bin_width / 2.0)
    });
    let n = ((hi - lo) / bin_width).round() as usize;
    if n < 2 {
        return Err(CalibrationError::InvalidInput(format!("range [{lo}, {hi}] holds fewer than two bins")));
    }
    let mut hist = vec![Complex64::new(0.0, 0.0); n];
    for z in z_values {
        let k = ((z - lo) / bin_width).floor();
        if k >= 0.0 && (k as usize) < n {
            hist[k as usize].re += 1.0;
        }
    }
    FftPlanner::new().plan_fft_forward(n).process(&mut hist);
    let span = n as f64 * bin_width;
    let half = n / 2 + 1;
    Ok(Spectrum {
        frequencies: (0..half).map(|k| k as f64 / span).collect(),
        power: hist[..half].iter().map(|c| c.norm_sqr()).collect(),
        bin_width,
    })
}
