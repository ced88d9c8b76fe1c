//! Scalar Fourier-optics model of the imaging train: pupil construction,
//! pupil-to-image transforms, axial propagation and PSF stacks.

mod fidelity;
mod mask;
mod pupil;
mod stack;
mod transform;
mod zernike;

pub use fidelity::dh_fidelity;
pub use mask::{dh_phase_mask, focal_shift, holographic_lens_phase, lens_for_shift, wrap_phase};
pub use pupil::{apodization, pupil_field, PupilOptions};
pub use stack::{psf_stack, PsfStack, StackOptions, DEFAULT_A_OVER_W0};
pub use transform::{
    aliasing_limit, fresnel_propagate, image_field_at, mft_matrix, propagate_to_image, propagate_to_image_window,
    ImageWindow,
};
pub use zernike::{noll_to_nm, zernike_phase, zernike_value, ZernikeTerm};

use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpticsError {
    #[error("grid needs n >= 2 and a positive pitch (n = {n}, pitch = {pitch})")]
    InvalidGrid { n: usize, pitch: f64 },
    #[error("invalid optical train: {0}")]
    InvalidTrain(String),
    #[error("Noll index {0} outside the supported range 4..=13")]
    NollOutOfRange(u32),
    #[error("pad factor must be at least 1, got {0}")]
    PadFactor(usize),
    #[error("propagation by {dz} m aliases the transfer function (limit {limit} m)")]
    Aliasing { dz: f64, limit: f64 },
    #[error("expected a {expected:?}-plane field, got {got:?}")]
    WrongPlane { expected: PlaneTag, got: PlaneTag },
    #[error("array of shape {got:?} does not match the {expected}x{expected} grid")]
    GridMismatch { expected: usize, got: (usize, usize) },
    #[error("beam waist must be positive, got {0}")]
    InvalidWaist(f64),
    #[error("field contains non-finite values")]
    NonFinite,
}

/// Square sampling grid with the optical axis at index `n/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub n: usize,
    pub pitch: f64,
}

impl GridSpec {
    pub fn new(n: usize, pitch: f64) -> Result<Self, OpticsError> {
        if n < 2 || !(pitch > 0.0) || !pitch.is_finite() {
            return Err(OpticsError::InvalidGrid { n, pitch });
        }
        Ok(Self { n, pitch })
    }

    /// SLM-sized default: 1050 pixels of 10.4 µm.
    pub fn slm() -> Self {
        Self { n: 1050, pitch: 10.4e-6 }
    }

    pub fn side_length(&self) -> f64 {
        self.n as f64 * self.pitch
    }

    pub fn center(&self) -> usize {
        self.n / 2
    }

    /// Pixel offset of index `i` from the optical axis.
    pub fn offset_px(&self, i: usize) -> f64 {
        i as f64 - self.center() as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.offset_px(i) * self.pitch
    }

    pub fn check(&self, shape: &[usize]) -> Result<(), OpticsError> {
        if shape != [self.n, self.n] {
            let got = (shape[0], shape.get(1).copied().unwrap_or(0));
            return Err(OpticsError::GridMismatch { expected: self.n, got });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneTag {
    Pupil,
    Image,
}

/// Complex field on a square grid. Arrays are indexed `[row, col]` with
/// `row` along physical y and `col` along physical x.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: GridSpec,
    pub values: Array2<Complex64>,
    pub plane: PlaneTag,
    /// Axial offset of this plane from its reference (image-space for
    /// image fields).
    pub z_offset: f64,
}

impl ComplexField {
    pub fn new(grid: GridSpec, values: Array2<Complex64>, plane: PlaneTag) -> Result<Self, OpticsError> {
        grid.check(values.shape())?;
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(OpticsError::NonFinite);
        }
        Ok(Self { grid, values, plane, z_offset: 0.0 })
    }

    /// `Σ|u|²·pitch²`.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.grid.pitch * self.grid.pitch
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn normalized(mut self) -> Self {
        let p = self.power();
        if p > 0.0 {
            let s = p.sqrt().recip();
            self.values.mapv_inplace(|v| v * s);
        }
        self
    }
}

/// Imaging train: objective, relay telescope onto the SLM, and the
/// imaging lenses behind it. Focal lengths enter only through ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalTrain {
    pub wavelength: f64,
    pub na: f64,
    pub slm_pitch: f64,
    pub f_obj: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub f_tube: f64,
}

impl Default for OpticalTrain {
    /// 852 nm, NA 0.6, 10.4 µm SLM pixels, a 230-pixel pupil radius and
    /// a lateral magnification of 100.
    fn default() -> Self {
        let f_obj = 10e-3;
        let f1 = 400e-3;
        let slm_pitch = 10.4e-6;
        let na = 0.6;
        let f2 = 230.0 * slm_pitch * f1 / (na * f_obj);
        Self { wavelength: 852e-9, na, slm_pitch, f_obj, f1, f2, f3: f2, f_tube: 2.5 * f2 }
    }
}

impl OpticalTrain {
    pub fn validate(&self) -> Result<(), OpticsError> {
        let lengths = [
            ("wavelength", self.wavelength),
            ("slm_pitch", self.slm_pitch),
            ("f_obj", self.f_obj),
            ("f1", self.f1),
            ("f2", self.f2),
            ("f3", self.f3),
            ("f_tube", self.f_tube),
        ];
        for (name, v) in lengths {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OpticsError::InvalidTrain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.na > 0.0 && self.na < 1.0) {
            return Err(OpticsError::InvalidTrain(format!("NA must lie in (0, 1), got {}", self.na)));
        }
        // The SLM-to-camera transform is modelled as a single Fourier
        // transform with focal length f_tube, which needs f3 = f2.
        if ((self.f3 - self.f2) / self.f2).abs() > 1e-9 {
            return Err(OpticsError::InvalidTrain(format!("f3 ({}) must equal f2 ({})", self.f3, self.f2)));
        }
        Ok(())
    }

    /// Same geometry at a different NA; the pupil radius scales with NA.
    pub fn with_na(&self, na: f64) -> Self {
        Self { na, ..self.clone() }
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Radius of the objective's back aperture imaged onto the SLM, in SLM pixels.
    pub fn pupil_radius_px(&self) -> f64 {
        self.na * self.f_obj * self.f2 / (self.f1 * self.slm_pitch)
    }

    /// `M = (f1/f_obj)·(f_tube/f3)`.
    pub fn lateral_magnification(&self) -> f64 {
        (self.f1 / self.f_obj) * (self.f_tube / self.f3)
    }

    pub fn axial_magnification(&self) -> f64 {
        self.lateral_magnification().powi(2)
    }

    /// Image-plane pixel `λ·f_tube/d` for a padded pupil of side `d`.
    pub fn image_pixel(&self, grid: &GridSpec, pad_factor: usize) -> f64 {
        self.wavelength * self.f_tube / (grid.side_length() * pad_factor as f64)
    }

    pub fn object_pixel(&self, grid: &GridSpec, pad_factor: usize) -> f64 {
        self.image_pixel(grid, pad_factor) / self.lateral_magnification()
    }

    /// Pupil phase that images an emitter at object-space `z` in focus,
    /// evaluated at squared SLM radius `u2` (m²).
    pub fn defocus_phase(&self, z_object: f64, u2: f64) -> f64 {
        -PI * self.axial_magnification() * z_object * u2 / (self.wavelength * self.f_tube * self.f_tube)
    }

    /// Object-space waist of the ideal LG beam whose pupil-plane waist is
    /// `a / a_over_w0`.
    pub fn object_waist(&self, a_over_w0: f64) -> f64 {
        let w_pupil = self.pupil_radius_px() * self.slm_pitch / a_over_w0;
        self.wavelength * self.f_tube / (PI * w_pupil * self.lateral_magnification())
    }
}
