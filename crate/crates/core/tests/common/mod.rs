//! Shared fixtures: the default optical train rendered onto a camera with
//! 155.5 nm pixels, and helpers to score localizations against truth.
#![allow(dead_code)]

use dhpsf::localization::{Detection, PipelineConfig};
use dhpsf::optics::{psf_stack, GridSpec, OpticalTrain, PupilOptions, StackOptions, DEFAULT_A_OVER_W0};
use dhpsf::synth::{object_to_pixel, Atom, StackPsfProvider};

pub const DZ: f64 = 532e-9;
pub const SITE: f64 = 612e-9;
/// Camera pixels are `BIN × BIN` blocks of the 31.1 nm simulation pixel.
pub const BIN: usize = 5;

/// Stack sampled every 0.1 d_z over `±half_dz`, binned onto the camera.
pub fn camera_provider(half_dz: f64) -> StackPsfProvider {
    let train = OpticalTrain::default();
    let grid = GridSpec::slm();
    let pupil = PupilOptions::double_helix(&train, &grid, DEFAULT_A_OVER_W0).unwrap();
    let steps = (half_dz * 10.0).round() as i64;
    let z: Vec<f64> = (-steps..=steps).map(|k| k as f64 * 0.1 * DZ).collect();
    let stack = psf_stack(&train, &grid, &pupil, &z, &StackOptions { pad_factor: 10, crop: 165 }).unwrap();
    StackPsfProvider::new(stack, BIN).unwrap()
}

pub fn pipeline(pixel_size: f64) -> PipelineConfig {
    PipelineConfig { pixel_size, ..PipelineConfig::default() }
}

/// Nearest detection to `atom` and its lateral distance in pixels.
pub fn nearest<'a>(atom: &Atom, dets: &'a [Detection], fov: &GridSpec) -> Option<(&'a Detection, f64)> {
    let (ax, ay) = object_to_pixel(fov, atom.x, atom.y);
    dets.iter().map(|d| (d, (d.x_px - ax).hypot(d.y_px - ay))).min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Whether the atom's PSF patch lies entirely inside the frame.
pub fn inside(atom: &Atom, fov: &GridSpec, margin_px: f64) -> bool {
    let (x, y) = object_to_pixel(fov, atom.x, atom.y);
    let hi = fov.n as f64 - 1.0 - margin_px;
    x >= margin_px && y >= margin_px && x <= hi && y <= hi
}
