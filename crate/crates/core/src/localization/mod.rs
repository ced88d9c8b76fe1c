//! Detection pipeline: background subtraction and low-pass filtering, peak
//! search, exclusive pairing, double-Gaussian or Radon angle estimation and
//! the angle-to-depth mapping.
//!
//! Frames are indexed `[row, col]`; pixel coordinates are `x = col`,
//! `y = row`, and angles are measured from +x towards +y.

mod double_gaussian;
mod filter;
mod peaks;
mod radon;

pub use double_gaussian::{fit_double_gaussian, fit_double_gaussian_lobes, DoubleGaussianFit, Lobe};
pub use filter::{gaussian_lowpass, mad_sigma, preprocess};
pub use peaks::{find_peaks, pair_peaks};
pub use radon::{line_projection, radon_angle, thresholded_centroid, RadonEstimate, SplineImage, RADON_STEP_DEG};

use crate::angle::wrap_half_turn;
use crate::fit::FitError;
use crate::lgmodes::RotationLaw;
use ndarray::{s, Array2};
use std::f64::consts::FRAC_PI_2;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LocalizationError {
    #[error("crop of radius {radius} around ({x:.1}, {y:.1}) leaves the frame")]
    CropOutOfBounds { x: f64, y: f64, radius: usize },
    #[error("fit collapsed to a single lobe (separation {separation:.2} px)")]
    DegenerateFit { separation: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("angle offset {offset:.4} rad lies outside the unambiguous branch |θ−α| < V·π/2")]
    AngleOutOfRange { offset: f64 },
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AngleMethod {
    DoubleGaussian,
    Radon,
}

impl fmt::Display for AngleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AngleMethod::DoubleGaussian => "double-gaussian",
            AngleMethod::Radon => "radon",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionFlag {
    /// `θ − α` fell outside the unambiguous branch; no depth assigned.
    AngleOutOfRange,
    /// Radon profile had no unique maximum.
    RadonDegenerate,
}

impl fmt::Display for DetectionFlag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DetectionFlag::AngleOutOfRange => "angle_out_of_range",
            DetectionFlag::RadonDegenerate => "radon_degenerate",
        })
    }
}

/// One localized emitter.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    /// Pixel coordinates of the PSF center.
    pub x_px: f64,
    pub y_px: f64,
    /// Object-space lateral position (m).
    pub x: f64,
    pub y: f64,
    /// Lobe-axis angle in `[−π/2, π/2)`.
    pub theta: f64,
    pub lobe_separation_px: f64,
    pub fit_residual: f64,
    pub method: AngleMethod,
    /// Object-space depth (m), when the angle maps onto the calibrated branch.
    pub z: Option<f64>,
    pub flags: Vec<DetectionFlag>,
}

impl Detection {
    pub fn new(
        x_px: f64,
        y_px: f64,
        theta: f64,
        separation: f64,
        residual: f64,
        method: AngleMethod,
        config: &PipelineConfig,
    ) -> Self {
        Self {
            x_px,
            y_px,
            x: x_px * config.pixel_size,
            y: y_px * config.pixel_size,
            theta: wrap_half_turn(theta),
            lobe_separation_px: separation,
            fit_residual: residual,
            method,
            z: None,
            flags: Vec::new(),
        }
    }

    pub fn flag_string(&self) -> String {
        self.flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Gaussian low-pass 1σ frequency, cycles per pixel.
    pub lowpass_cutoff: f64,
    /// Minimum peak separation, pixels.
    pub peak_min_distance: f64,
    /// Accepted lobe separation `[d_min, d_max]`, pixels.
    pub pair_gate: (f64, f64),
    /// Half-width of the square fit crop, pixels.
    pub crop_radius: usize,
    /// Peak threshold in units of the filtered frame's robust σ.
    pub threshold: f64,
    /// Peak threshold as a fraction of the filtered frame's maximum.
    pub relative_threshold: f64,
    /// Initial lobe σ for the double-Gaussian fit, pixels.
    pub lobe_sigma: f64,
    pub max_iterations: usize,
    pub method: AngleMethod,
    /// Object-space size of one pixel (m).
    pub pixel_size: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            lowpass_cutoff: 0.16,
            peak_min_distance: 3.0,
            pair_gate: (8.0, 12.0),
            crop_radius: 11,
            threshold: 5.0,
            relative_threshold: 0.3,
            lobe_sigma: 2.5,
            max_iterations: 200,
            method: AngleMethod::DoubleGaussian,
            pixel_size: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), LocalizationError> {
        let (lo, hi) = self.pair_gate;
        if !(lo > 0.0 && lo < hi) {
            return Err(LocalizationError::InvalidConfig(format!(
                "pair gate [{lo}, {hi}] must satisfy 0 < d_min < d_max"
            )));
        }
        if (self.crop_radius as f64) < hi / 2.0 {
            return Err(LocalizationError::InvalidConfig(format!(
                "crop radius {} does not cover half the maximum separation {hi}",
                self.crop_radius
            )));
        }
        if !(self.pixel_size > 0.0) || !(self.lobe_sigma > 0.0) {
            return Err(LocalizationError::InvalidConfig("pixel size and lobe sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Invert the rotation law on its principal branch:
/// `z = zR·tan((θ − α)/V)`, requiring `|θ − α| < V·π/2`.
pub fn z_from_angle(theta: f64, law: &RotationLaw) -> Result<f64, LocalizationError> {
    let offset = theta - law.alpha;
    let x = offset / law.rate;
    if !(x.abs() < FRAC_PI_2) {
        return Err(LocalizationError::AngleOutOfRange { offset });
    }
    Ok(law.rayleigh_length * x.tan())
}

/// Detections of one frame plus the pairs that could not be turned into
/// detections.
#[derive(Debug, Clone, Default)]
pub struct FrameResult {
    pub detections: Vec<Detection>,
    pub rejected: Vec<((Peak, Peak), LocalizationError)>,
}

/// Full pipeline on one frame. Angles are compared with `α` modulo π
/// before inverting the rotation law.
pub fn localize_frame(
    frame: &Array2<f64>,
    config: &PipelineConfig,
    law: &RotationLaw,
) -> Result<FrameResult, LocalizationError> {
    config.validate()?;
    let filtered = preprocess(frame, config.lowpass_cutoff);
    let peaks = find_peaks(&filtered, config);
    let mut result = FrameResult::default();
    for pair in pair_peaks(&peaks, config) {
        match detect(frame, &pair, config) {
            Ok(mut det) => {
                let offset = wrap_half_turn(det.theta - law.alpha);
                match z_from_angle(law.alpha + offset, law) {
                    Ok(z) => det.z = Some(z),
                    Err(_) => det.flags.push(DetectionFlag::AngleOutOfRange),
                }
                result.detections.push(det);
            }
            Err(e) => result.rejected.push((pair, e)),
        }
    }
    Ok(result)
}

fn detect(frame: &Array2<f64>, pair: &(Peak, Peak), config: &PipelineConfig) -> Result<Detection, LocalizationError> {
    let fit = fit_double_gaussian_lobes(frame, pair, config)?;
    let (cx, cy) = fit.center();
    match config.method {
        AngleMethod::DoubleGaussian => Ok(Detection::new(
            cx,
            cy,
            fit.theta(),
            fit.separation(),
            fit.rms_residual,
            AngleMethod::DoubleGaussian,
            config,
        )),
        AngleMethod::Radon => {
            let r = config.crop_radius as isize;
            let (r0, c0) = (cy.round() as isize - r, cx.round() as isize - r);
            let patch = frame.slice(s![r0..r0 + 2 * r + 1, c0..c0 + 2 * r + 1]).mapv(|v| v - fit.background);
            let est = radon_angle(&patch, Some((cx - c0 as f64, cy - r0 as f64)));
            let mut det =
                Detection::new(cx, cy, est.angle, fit.separation(), fit.rms_residual, AngleMethod::Radon, config);
            if est.degenerate {
                det.flags.push(DetectionFlag::RadonDegenerate);
            }
            Ok(det)
        }
    }
}
