use super::{
    holographic_lens_phase, zernike_phase, ComplexField, GridSpec, OpticalTrain, OpticsError, PlaneTag, ZernikeTerm,
};
use ndarray::Array2;
use num_complex::Complex64;

/// Aplanatic apodization `(1 − (ρ·NA)²)^(−1/4)`, with `A(0) = 1` and a hard
/// aperture at `ρ = 1`.
pub fn apodization(rho: f64, na: f64) -> f64 {
    if rho > 1.0 {
        0.0
    } else {
        (1.0 - (rho * na).powi(2)).powf(-0.25)
    }
}

/// Phase contributions applied on the SLM.
#[derive(Debug, Clone, Default)]
pub struct PupilOptions {
    /// Programmed phase pattern on the full grid (e.g. the DH mask).
    pub mask: Option<Array2<f64>>,
    pub zernikes: Vec<ZernikeTerm>,
    /// Holographic lens focal length; `None` disables it.
    pub f_hol: Option<f64>,
}

/// Generalized pupil function: apodized amplitude inside the aperture and
/// the sum of all programmed and aberration phases.
pub fn pupil_field(train: &OpticalTrain, grid: &GridSpec, options: &PupilOptions) -> Result<ComplexField, OpticsError> {
    train.validate()?;
    if let Some(mask) = &options.mask {
        grid.check(mask.shape())?;
    }
    let radius = pupil_radius_on(train, grid);
    let aberration = zernike_phase(grid, radius, &options.zernikes)?;
    let lens = holographic_lens_phase(grid, options.f_hol, train.wavelength);
    let values = Array2::from_shape_fn((grid.n, grid.n), |(row, col)| {
        let rho = grid.offset_px(col).hypot(grid.offset_px(row)) / radius;
        let amp = apodization(rho, train.na);
        if amp == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let mut phase = aberration[[row, col]] + lens[[row, col]];
        if let Some(mask) = &options.mask {
            phase += mask[[row, col]];
        }
        Complex64::from_polar(amp, phase)
    });
    ComplexField::new(*grid, values, PlaneTag::Pupil)
}

/// Pupil radius in pixels of `grid` (which need not use the SLM pitch).
pub(crate) fn pupil_radius_on(train: &OpticalTrain, grid: &GridSpec) -> f64 {
    train.pupil_radius_px() * train.slm_pitch / grid.pitch
}
