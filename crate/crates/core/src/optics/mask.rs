//! SLM phase patterns: the double-helix mask and the holographic lens.

use super::{GridSpec, OpticalTrain, OpticsError};
use crate::lgmodes::{BeamGeometry, LgSuperposition};
use ndarray::Array2;
use std::f64::consts::PI;

pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Argument of the in-focus double-helix superposition with waist `w0_px`
/// (in grid pixels), wrapped into `[0, 2π)`.
pub fn dh_phase_mask(grid: &GridSpec, w0_px: f64) -> Result<Array2<f64>, OpticsError> {
    if !(w0_px > 0.0) {
        return Err(OpticsError::InvalidWaist(w0_px));
    }
    // Work in pixel units; the wavelength only matters away from focus.
    let geom = BeamGeometry::new(w0_px, 1.0).map_err(|_| OpticsError::InvalidWaist(w0_px))?;
    let dh = LgSuperposition::double_helix();
    Ok(Array2::from_shape_fn((grid.n, grid.n), |(row, col)| {
        let u = dh.field_xy(&geom, grid.offset_px(col), grid.offset_px(row), 0.0);
        wrap_phase(u.arg())
    }))
}

/// Quadratic lens phase `−k(u²+v²)/(2 f_hol)` wrapped into `[0, 2π)`.
/// `None` disables the lens.
pub fn holographic_lens_phase(grid: &GridSpec, f_hol: Option<f64>, wavelength: f64) -> Array2<f64> {
    let Some(f) = f_hol else {
        return Array2::zeros((grid.n, grid.n));
    };
    let k = 2.0 * PI / wavelength;
    Array2::from_shape_fn((grid.n, grid.n), |(row, col)| {
        let u = grid.coordinate(col);
        let v = grid.coordinate(row);
        wrap_phase(-k * (u * u + v * v) / (2.0 * f))
    })
}

/// Object-space displacement of the in-focus plane caused by a holographic
/// lens of focal length `f_hol`, signed along the PSF-stack axis. Its
/// magnitude is `f_obj²·f2²/(f1²·|f_hol|)`; a converging lens (`f_hol > 0`)
/// brings emitters at negative stack `z` into focus.
pub fn focal_shift(train: &OpticalTrain, f_hol: Option<f64>) -> f64 {
    match f_hol {
        None => 0.0,
        Some(f) => -(train.f_obj * train.f2 / train.f1).powi(2) / f,
    }
}

/// Lens focal length producing an object-space focal shift `dz`; the
/// inverse of [`focal_shift`].
pub fn lens_for_shift(train: &OpticalTrain, dz: f64) -> Option<f64> {
    if dz == 0.0 {
        None
    } else {
        Some(-(train.f_obj * train.f2 / train.f1).powi(2) / dz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mask_is_flat_on_positive_x_axis_near_center() {
        let grid = GridSpec::new(256, 1.0).unwrap();
        let w0 = 40.0;
        let mask = dh_phase_mask(&grid, w0).unwrap();
        let c = grid.center();
        for col in c + 1..c + 40 {
            let p = mask[[c, col]];
            assert!(p < 1e-9 || 2.0 * PI - p < 1e-9, "col {col}: {p}");
        }
    }

    #[test]
    fn mask_has_twofold_symmetry() {
        let grid = GridSpec::new(200, 1.0).unwrap();
        let mask = dh_phase_mask(&grid, 30.0).unwrap();
        let c = grid.center();
        for row in 1..grid.n {
            for col in 1..grid.n {
                let (r2, c2) = (2 * c - row, 2 * c - col);
                let d = crate::angle::wrap_full_turn(mask[[row, col]] - mask[[r2, c2]]);
                assert!(d.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn total_winding_at_large_radius_is_two_turns() {
        let grid = GridSpec::new(400, 1.0).unwrap();
        let w0 = 40.0;
        let mask = dh_phase_mask(&grid, w0).unwrap();
        let c = grid.center() as f64;
        let radius = 3.0 * w0;
        let steps = 2000;
        let sample = |t: f64| {
            let x = c + radius * t.cos();
            let y = c + radius * t.sin();
            mask[[y.round() as usize, x.round() as usize]]
        };
        let mut winding = 0.0;
        let mut prev = sample(0.0);
        for s in 1..=steps {
            let cur = sample(2.0 * PI * s as f64 / steps as f64);
            winding += crate::angle::wrap_full_turn(cur - prev);
            prev = cur;
        }
        assert_abs_diff_eq!(winding, 4.0 * PI, epsilon = 1e-6);
    }

    #[test]
    fn lens_phase_examples() {
        let grid = GridSpec::new(64, 10e-6).unwrap();
        let lambda = 852e-9;
        let f = 2.0;
        let lens = holographic_lens_phase(&grid, Some(f), lambda);
        assert_eq!(lens[[32, 32]], 0.0);
        // decreasing with radius before wrapping
        let k = 2.0 * PI / lambda;
        let raw = |r: f64| -k * r * r / (2.0 * f);
        assert!(raw(20e-6) < raw(10e-6));
        assert_abs_diff_eq!(lens[[32, 33]], wrap_phase(raw(10e-6)), epsilon = 1e-12);
        // k r²/(2f) = 2π wraps to zero
        let r_wrap = (2.0 * PI * 2.0 * f / k).sqrt();
        assert_abs_diff_eq!(wrap_phase(raw(r_wrap)), 0.0, epsilon = 1e-9);
        assert!(holographic_lens_phase(&grid, None, lambda).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn focal_shift_scaling() {
        let t = OpticalTrain::default();
        assert_eq!(focal_shift(&t, None), 0.0);
        let a = focal_shift(&t, Some(1.5));
        let b = focal_shift(&t, Some(3.0));
        assert_abs_diff_eq!(a, 2.0 * b, epsilon = 1e-20);
        let expected = (t.f_obj * t.f2 / t.f1).powi(2) / 1.5;
        assert_abs_diff_eq!(a.abs(), expected, epsilon = 1e-20);
        let f = lens_for_shift(&t, 2.0 * 532e-9).unwrap();
        assert_abs_diff_eq!(focal_shift(&t, Some(f)), 2.0 * 532e-9, epsilon = 1e-18);
    }
}
