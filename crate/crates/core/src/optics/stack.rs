use super::pupil::pupil_radius_on;
use super::{
    aliasing_limit, dh_phase_mask, image_field_at, pupil_field, GridSpec, ImageWindow, OpticalTrain, OpticsError,
    PupilOptions, ZernikeTerm,
};
use ndarray::Array2;
use rayon::prelude::*;

/// Default mask-to-aperture ratio `a/w0`.
pub const DEFAULT_A_OVER_W0: f64 = 2.97;

impl PupilOptions {
    /// Double-helix mask with pupil radius `a` and waist `a / a_over_w0`.
    pub fn double_helix(train: &OpticalTrain, grid: &GridSpec, a_over_w0: f64) -> Result<Self, OpticsError> {
        let w0_px = pupil_radius_on(train, grid) / a_over_w0;
        Ok(Self { mask: Some(dh_phase_mask(grid, w0_px)?), ..Default::default() })
    }

    pub fn with_zernikes(mut self, zernikes: Vec<ZernikeTerm>) -> Self {
        self.zernikes = zernikes;
        self
    }

    pub fn with_lens(mut self, f_hol: Option<f64>) -> Self {
        self.f_hol = f_hol;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackOptions {
    /// Zero-padding factor fixing the output pixel `λ·f_tube/(pad·d)`.
    pub pad_factor: usize,
    /// Side length of the stored window in output pixels.
    pub crop: usize,
}

impl Default for StackOptions {
    fn default() -> Self {
        Self { pad_factor: 10, crop: 160 }
    }
}

/// Intensity images of a point emitter at a list of object-space depths.
/// Each frame is scaled so the full (uncropped) image plane sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    pub z_positions: Vec<f64>,
    pub frames: Vec<Array2<f64>>,
    pub pixel_pitch_object: f64,
}

impl PsfStack {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> usize {
        self.frames.first().map_or(0, |f| f.nrows())
    }

    pub fn z_range(&self) -> Option<(f64, f64)> {
        let lo = self.z_positions.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.z_positions.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo <= hi).then_some((lo, hi))
    }
}

/// Compute `|E(z)|²` for each object-space `z`; axial positions map to the
/// image side through the axial magnification `M²`.
pub fn psf_stack(
    train: &OpticalTrain,
    grid: &GridSpec,
    pupil: &PupilOptions,
    z_list: &[f64],
    options: &StackOptions,
) -> Result<PsfStack, OpticsError> {
    if options.pad_factor < 1 {
        return Err(OpticsError::PadFactor(options.pad_factor));
    }
    let field = pupil_field(train, grid, pupil)?;
    let power = field.power();
    let pitch = train.image_pixel(grid, options.pad_factor);
    let padded = GridSpec::new(grid.n * options.pad_factor, pitch)?;
    let limit = aliasing_limit(&padded, train.wavelength);
    for &z in z_list {
        let dz = train.axial_magnification() * z;
        if !dz.is_finite() || dz.abs() > limit {
            return Err(OpticsError::Aliasing { dz, limit });
        }
    }
    let window = ImageWindow::centered(options.crop, pitch);
    let frames = z_list
        .par_iter()
        .map(|&z| {
            let e = image_field_at(&field, train, &window, z)?;
            Ok(e.mapv(|v| v.norm_sqr() * pitch * pitch / power))
        })
        .collect::<Result<Vec<_>, OpticsError>>()?;
    Ok(PsfStack {
        z_positions: z_list.to_vec(),
        frames,
        pixel_pitch_object: train.object_pixel(grid, options.pad_factor),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (OpticalTrain, GridSpec) {
        let train = OpticalTrain::default();
        // 96-pixel grid with a 30-pixel pupil radius.
        (train.clone(), GridSpec::new(96, train.slm_pitch * 230.0 / 30.0).unwrap())
    }

    #[test]
    fn plain_focus_peaks_at_center() {
        let (train, grid) = small();
        let opts = StackOptions { pad_factor: 4, crop: 64 };
        let stack = psf_stack(&train, &grid, &PupilOptions::default(), &[0.0], &opts).unwrap();
        let f = &stack.frames[0];
        let (argmax, _) =
            f.indexed_iter().fold(((0, 0), f64::MIN), |best, (ix, &v)| if v > best.1 { (ix, v) } else { best });
        assert_eq!(argmax, (32, 32));
        let total: f64 = f.sum();
        assert!(total < 1.0 && total > 0.9);
    }

    #[test]
    fn plain_stack_is_symmetric_in_z() {
        let (train, grid) = small();
        let opts = StackOptions { pad_factor: 4, crop: 48 };
        let z = [-1.0e-6, 1.0e-6];
        let stack = psf_stack(&train, &grid, &PupilOptions::default(), &z, &opts).unwrap();
        let peak = stack.frames[0].iter().copied().fold(0.0, f64::max);
        for (a, b) in stack.frames[0].iter().zip(stack.frames[1].iter()) {
            assert!((a - b).abs() < 1e-9 * peak);
        }
    }

    #[test]
    fn aliasing_is_reported() {
        let (train, grid) = small();
        let opts = StackOptions { pad_factor: 2, crop: 16 };
        let err = psf_stack(&train, &grid, &PupilOptions::default(), &[1e-3], &opts);
        assert!(matches!(err, Err(OpticsError::Aliasing { .. })));
    }
}
