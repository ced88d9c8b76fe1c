//! Rotation curves of the simulated double-helix PSF: NA scans and Zernike
//! aberration scans.

use crate::angle::{orientation_difference, unwrap_orientations};
use crate::calibration::{fit_rotation_law, CalibrationError, RotationFit};
use crate::fit::golden_section_max;
use crate::localization::{find_peaks, gaussian_lowpass, radon_angle, PipelineConfig};
use crate::optics::{psf_stack, GridSpec, OpticalTrain, OpticsError, PupilOptions, StackOptions, ZernikeTerm};
use ndarray::Array2;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AberrationError {
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("invalid scan: {0}")]
    InvalidInput(String),
}

/// Shared simulation settings of a scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSettings {
    pub train: OpticalTrain,
    pub grid: GridSpec,
    pub a_over_w0: f64,
    pub stack: StackOptions,
    /// Axial unit `d_z` (m).
    pub plane_spacing: f64,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            train: OpticalTrain::default(),
            grid: GridSpec::slm(),
            a_over_w0: crate::optics::DEFAULT_A_OVER_W0,
            stack: StackOptions::default(),
            plane_spacing: 532e-9,
        }
    }
}

/// Radon angle of the simulated PSF against axial position.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationCurve {
    /// Object-space axial positions (m).
    pub z: Vec<f64>,
    /// Lobe-axis angles in `[−π/2, π/2)`.
    pub theta: Vec<f64>,
    /// Positions where the Radon profile had no unique maximum.
    pub degenerate: Vec<bool>,
    /// Positions where the image no longer shows two dominant lobes.
    pub degraded: Vec<bool>,
    pub na: f64,
    /// Aberration applied, if any.
    pub aberration: Option<ZernikeTerm>,
}

impl RotationCurve {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Angle at the sample nearest `z = 0`.
    pub fn theta_at_focus(&self) -> Option<f64> {
        (0..self.len()).min_by(|&a, &b| self.z[a].abs().total_cmp(&self.z[b].abs())).map(|i| self.theta[i])
    }

    /// Continuous version of the wrapped angles.
    pub fn unwrapped(&self) -> Vec<f64> {
        unwrap_orientations(&self.theta)
    }

    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    /// Whether the angle at `i` is unreliable (degenerate or degraded).
    pub fn flagged(&self, i: usize) -> bool {
        self.degenerate[i] || self.degraded[i]
    }

    pub fn flagged_at_focus(&self) -> bool {
        (0..self.len()).min_by(|&a, &b| self.z[a].abs().total_cmp(&self.z[b].abs())).is_some_and(|i| self.flagged(i))
    }
}

/// Smoothing frequency (cycles per pixel) of the lobe check; roughly the
/// lobe width of the finely sampled simulated PSF.
const LOBE_CUTOFF: f64 = 0.02;
/// A third maximum above this fraction of the second-brightest one means
/// the pattern is no longer a lobe pair.
const THIRD_LOBE_LIMIT: f64 = 0.75;

/// Two-lobe check on a finely sampled PSF image: after smoothing, the two
/// brightest maxima must clearly dominate any third one.
pub fn has_two_lobes(frame: &Array2<f64>) -> bool {
    let smooth = gaussian_lowpass(frame, LOBE_CUTOFF);
    let cfg =
        PipelineConfig { threshold: 0.0, relative_threshold: 0.1, peak_min_distance: 5.0, ..PipelineConfig::default() };
    let mut amps: Vec<f64> = find_peaks(&smooth, &cfg).iter().map(|p| p.amplitude).collect();
    amps.sort_by(|a, b| b.total_cmp(a));
    match amps.len() {
        0 | 1 => false,
        2 => true,
        _ => amps[2] < THIRD_LOBE_LIMIT * amps[1],
    }
}

/// Simulate the PSF at every `z` and extract the Radon angle. Projections
/// pass through the geometric image of the emitter (the window center)
/// rather than the intensity centroid, which coma flare drags off the
/// lobe pair.
pub fn rotation_curve(
    settings: &ScanSettings,
    na: f64,
    aberration: Option<ZernikeTerm>,
    z: &[f64],
) -> Result<RotationCurve, AberrationError> {
    let train = settings.train.with_na(na);
    let mut pupil = PupilOptions::double_helix(&train, &settings.grid, settings.a_over_w0)?;
    if let Some(term) = aberration {
        pupil = pupil.with_zernikes(vec![ZernikeTerm::new(term.noll, term.waves)?]);
    }
    let stack = psf_stack(&train, &settings.grid, &pupil, z, &settings.stack)?;
    let center = (settings.stack.crop / 2) as f64;
    let estimates: Vec<_> =
        stack.frames.par_iter().map(|f| (radon_angle(f, Some((center, center))), has_two_lobes(f))).collect();
    Ok(RotationCurve {
        z: z.to_vec(),
        theta: estimates.iter().map(|e| e.0.angle).collect(),
        degenerate: estimates.iter().map(|e| e.0.degenerate).collect(),
        degraded: estimates.iter().map(|e| !e.1).collect(),
        na,
        aberration,
    })
}

/// `n` evenly spaced positions covering `[−half, half]`.
pub fn symmetric_grid(half: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    (0..n).map(|i| -half + 2.0 * half * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct NaScanEntry {
    pub curve: RotationCurve,
    /// Rotation-law fit with `V` free.
    pub fit: RotationFit,
}

/// Unaberrated rotation curves at each NA over `±half_range_dz·d_z` in
/// `steps` points, each fitted with `V`, `zR` and `α` free.
pub fn na_scan(
    settings: &ScanSettings,
    na_values: &[f64],
    half_range_dz: f64,
    steps: usize,
) -> Result<Vec<NaScanEntry>, AberrationError> {
    let z = symmetric_grid(half_range_dz * settings.plane_spacing, steps);
    na_values
        .iter()
        .map(|&na| {
            let curve = rotation_curve(settings, na, None, &z)?;
            let fit = fit_rotation_law(&curve.z, &curve.theta, None)?;
            Ok(NaScanEntry { curve, fit })
        })
        .collect()
}

/// Default coefficient list (waves RMS).
pub const DEFAULT_COEFFICIENTS: [f64; 5] = [-0.15, -0.075, 0.0, 0.075, 0.15];

#[derive(Debug, Clone)]
pub struct ZernikeScan {
    pub unaberrated: RotationCurve,
    /// One curve per (Noll index, nonzero coefficient).
    pub curves: Vec<RotationCurve>,
}

impl ZernikeScan {
    pub fn curve(&self, noll: u32, waves: f64) -> Option<&RotationCurve> {
        if waves == 0.0 {
            return Some(&self.unaberrated);
        }
        self.curves.iter().find(|c| c.aberration.is_some_and(|t| t.noll == noll && t.waves == waves))
    }

    /// `Δα(W) = θ(z=0; W) − θ(z=0; 0)` modulo π.
    pub fn delta_alpha(&self, noll: u32, waves: f64) -> Option<f64> {
        let a = self.curve(noll, waves)?.theta_at_focus()?;
        Some(orientation_difference(a, self.unaberrated.theta_at_focus()?))
    }
}

/// Rotation curves at integer multiples of `d_z` in `[−z_max_dz, z_max_dz]`
/// for every Noll index and coefficient. The coefficient list must be
/// symmetric about zero and contain zero; the shared `W = 0` curve is
/// computed once.
pub fn zernike_scan(
    settings: &ScanSettings,
    na: f64,
    nolls: &[u32],
    coefficients: &[f64],
    z_max_dz: u32,
) -> Result<ZernikeScan, AberrationError> {
    if !coefficients.contains(&0.0) {
        return Err(AberrationError::InvalidInput("coefficient list must include 0".into()));
    }
    if let Some(w) = coefficients.iter().find(|w| !coefficients.iter().any(|v| (*v + **w).abs() < 1e-15)) {
        return Err(AberrationError::InvalidInput(format!("coefficient list is not symmetric: {w} has no partner")));
    }
    for &j in nolls {
        ZernikeTerm::new(j, 0.0)?;
    }
    let m = z_max_dz as i64;
    let z: Vec<f64> = (-m..=m).map(|k| k as f64 * settings.plane_spacing).collect();
    let unaberrated = rotation_curve(settings, na, None, &z)?;
    let mut curves = Vec::new();
    for &j in nolls {
        for &w in coefficients.iter().filter(|w| **w != 0.0) {
            curves.push(rotation_curve(settings, na, Some(ZernikeTerm { noll: j, waves: w }), &z)?);
        }
    }
    Ok(ZernikeScan { unaberrated, curves })
}

/// Best pure z-translation mapping `reference` onto `curve`, i.e. the shift
/// `s` minimizing the RMS of `θ(z) − θ_ref(z − s)` over the overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationFit {
    /// Shift (m); positive moves the reference curve towards +z.
    pub shift: f64,
    /// RMS angle residual (rad).
    pub rms: f64,
    pub overlap: usize,
}

/// Fit a z-translation of `reference` (linearly interpolated on its
/// unwrapped angles) to `curve`, searching shifts within `±max_shift`.
pub fn translation_fit(
    reference: &RotationCurve,
    curve: &RotationCurve,
    max_shift: f64,
) -> Result<TranslationFit, AberrationError> {
    if reference.len() < 2 || curve.is_empty() {
        return Err(AberrationError::InvalidInput("translation fit needs two non-empty curves".into()));
    }
    let rz = &reference.z;
    let rt = reference.unwrapped();
    let interp = |z: f64| -> Option<f64> {
        if z < rz[0] || z > rz[rz.len() - 1] {
            return None;
        }
        let k = rz.partition_point(|v| *v <= z).clamp(1, rz.len() - 1);
        let t = (z - rz[k - 1]) / (rz[k] - rz[k - 1]);
        Some(rt[k - 1] + t * (rt[k] - rt[k - 1]))
    };
    let stats = |s: f64| -> (f64, usize) {
        let (sum, n) = curve
            .z
            .iter()
            .zip(&curve.theta)
            .filter_map(|(z, th)| interp(z - s).map(|r| orientation_difference(*th, r).powi(2)))
            .fold((0.0, 0), |(a, n), v| (a + v, n + 1));
        if n == 0 {
            (f64::INFINITY, 0)
        } else {
            ((sum / n as f64).sqrt(), n)
        }
    };
    // scan on a fine grid first; the objective is not unimodal over wide ranges
    let n = 400;
    let step = 2.0 * max_shift / n as f64;
    let best = (0..=n)
        .map(|i| -max_shift + i as f64 * step)
        .min_by(|a, b| stats(*a).0.total_cmp(&stats(*b).0))
        .expect("non-empty scan");
    let (shift, _) =
        golden_section_max(|s| -stats(s).0, best - step, best + step, step * 1e-4).map_err(CalibrationError::from)?;
    let (rms, overlap) = stats(shift);
    Ok(TranslationFit { shift, rms, overlap })
}
