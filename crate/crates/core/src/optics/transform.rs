//! Pupil-to-image transforms and angular-spectrum propagation.
//!
//! The image field is the Fourier transform of the pupil field with focal
//! length `f_tube`:
//!
//! `E(x, y) = p²/(λ f) · Σ P(u, v)·exp(−2πi(u x + v y)/(λ f))`
//!
//! On the grid `x = k·λf/(N p)` this is the unitary, centered DFT of the
//! pupil zero-padded to `N` samples. Only the pupil's nonzero support and
//! the requested output window enter the computation, so evaluating a
//! crop costs two small matrix products instead of an `N × N` FFT.

use super::{ComplexField, GridSpec, OpticalTrain, OpticsError, PlaneTag};
use ndarray::{s, Array2, Axis};
use num_complex::Complex64;
use rustfft::FftPlanner;
use std::f64::consts::PI;

/// Square sampling window in the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageWindow {
    pub n: usize,
    /// Image-plane sample spacing (m).
    pub pitch: f64,
    /// Image-plane coordinates of the window's center sample `(x, y)`.
    pub center: (f64, f64),
}

impl ImageWindow {
    pub fn centered(n: usize, pitch: f64) -> Self {
        Self { n, pitch, center: (0.0, 0.0) }
    }

    fn coords(&self, origin: f64) -> Vec<f64> {
        (0..self.n).map(|i| origin + (i as f64 - (self.n / 2) as f64) * self.pitch).collect()
    }
}

/// `A[k, j] = exp(−2πi·in_j·out_k/scale)`.
pub fn mft_matrix(inputs: &[f64], outputs: &[f64], scale: f64) -> Array2<Complex64> {
    Array2::from_shape_fn((outputs.len(), inputs.len()), |(k, j)| {
        Complex64::from_polar(1.0, -2.0 * PI * inputs[j] * outputs[k] / scale)
    })
}

/// Row and column ranges containing every nonzero pupil sample.
fn support(values: &Array2<Complex64>) -> Option<((usize, usize), (usize, usize))> {
    let mut rows = (usize::MAX, 0);
    let mut cols = (usize::MAX, 0);
    for ((r, c), v) in values.indexed_iter() {
        if v.re != 0.0 || v.im != 0.0 {
            rows = (rows.0.min(r), rows.1.max(r));
            cols = (cols.0.min(c), cols.1.max(c));
        }
    }
    (rows.0 != usize::MAX).then_some((rows, cols))
}

/// Image field sampled on `window` for an emitter at object-space `z`
/// (the paraxial transfer phase is applied on the pupil side).
pub fn image_field_at(
    pupil: &ComplexField,
    train: &OpticalTrain,
    window: &ImageWindow,
    z_object: f64,
) -> Result<Array2<Complex64>, OpticsError> {
    if pupil.plane != PlaneTag::Pupil {
        return Err(OpticsError::WrongPlane { expected: PlaneTag::Pupil, got: pupil.plane });
    }
    let Some(((r0, r1), (c0, c1))) = support(&pupil.values) else {
        return Ok(Array2::zeros((window.n, window.n)));
    };
    let grid = pupil.grid;
    let v: Vec<f64> = (r0..=r1).map(|i| grid.coordinate(i)).collect();
    let u: Vec<f64> = (c0..=c1).map(|i| grid.coordinate(i)).collect();
    let mut block = pupil.values.slice(s![r0..=r1, c0..=c1]).to_owned();
    if z_object != 0.0 {
        for ((r, c), val) in block.indexed_iter_mut() {
            let u2 = u[c] * u[c] + v[r] * v[r];
            *val *= Complex64::from_polar(1.0, train.defocus_phase(z_object, u2));
        }
    }
    let scale = train.wavelength * train.f_tube;
    let ay = mft_matrix(&v, &window.coords(window.center.1), scale);
    let ax = mft_matrix(&u, &window.coords(window.center.0), scale);
    let norm = Complex64::new(grid.pitch * grid.pitch / scale, 0.0);
    Ok(ay.dot(&block).dot(&ax.t()) * norm)
}

/// In-focus image field on a centered `crop × crop` window sampled at the
/// padded-DFT pixel `λ·f_tube/(pad·d)`.
pub fn propagate_to_image(
    field: &ComplexField,
    pad_factor: usize,
    train: &OpticalTrain,
    crop: usize,
) -> Result<ComplexField, OpticsError> {
    if pad_factor < 1 {
        return Err(OpticsError::PadFactor(pad_factor));
    }
    let pitch = train.image_pixel(&field.grid, pad_factor);
    propagate_to_image_window(field, train, &ImageWindow::centered(crop, pitch), 0.0)
}

/// Image field on an arbitrary centered window for object-space `z`.
pub fn propagate_to_image_window(
    field: &ComplexField,
    train: &OpticalTrain,
    window: &ImageWindow,
    z_object: f64,
) -> Result<ComplexField, OpticsError> {
    let values = image_field_at(field, train, window, z_object)?;
    let grid = GridSpec::new(window.n, window.pitch)?;
    let mut out = ComplexField::new(grid, values, PlaneTag::Image)?;
    out.z_offset = train.axial_magnification() * z_object;
    Ok(out)
}

fn fft2(values: &mut Array2<Complex64>, inverse: bool) {
    let n = values.nrows();
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for axis in [Axis(1), Axis(0)] {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in values.lanes_mut(axis) {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            fft.process(&mut buf);
            lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
        }
    }
}

/// Largest propagation distance for which the transfer-function phase
/// changes by at most π between neighbouring frequency samples.
pub fn aliasing_limit(grid: &GridSpec, wavelength: f64) -> f64 {
    grid.n as f64 * grid.pitch * grid.pitch / wavelength
}

/// Angular-spectrum propagation with the paraxial transfer function
/// `H = exp(−iπλ·dz·(fx² + fy²))`.
pub fn fresnel_propagate(field: &ComplexField, dz_image: f64, wavelength: f64) -> Result<ComplexField, OpticsError> {
    if field.plane != PlaneTag::Image {
        return Err(OpticsError::WrongPlane { expected: PlaneTag::Image, got: field.plane });
    }
    let grid = field.grid;
    let limit = aliasing_limit(&grid, wavelength);
    if dz_image.abs() > limit {
        return Err(OpticsError::Aliasing { dz: dz_image, limit });
    }
    let mut out = field.clone();
    out.z_offset += dz_image;
    if dz_image == 0.0 {
        return Ok(out);
    }
    let n = grid.n;
    let freq = |k: usize| {
        let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
        signed / (n as f64 * grid.pitch)
    };
    fft2(&mut out.values, false);
    let scale = 1.0 / (n * n) as f64;
    for ((r, c), v) in out.values.indexed_iter_mut() {
        let f2 = freq(r).powi(2) + freq(c).powi(2);
        *v *= Complex64::from_polar(scale, -PI * wavelength * dz_image * f2);
    }
    fft2(&mut out.values, true);
    Ok(out)
}
