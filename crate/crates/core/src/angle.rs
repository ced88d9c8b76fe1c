//! Angle helpers for orientations that are only defined modulo π.

use std::f64::consts::{FRAC_PI_2, PI};

/// Map an angle into the half-open interval `[-π/2, π/2)`.
pub fn wrap_half_turn(angle: f64) -> f64 {
    let wrapped = (angle + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    // rem_euclid can return exactly PI for tiny negative inputs.
    if wrapped >= FRAC_PI_2 {
        wrapped - PI
    } else {
        wrapped
    }
}

/// Map an angle into `[-π, π)`.
pub fn wrap_full_turn(angle: f64) -> f64 {
    let wrapped = (angle + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Signed difference `a - b` on the circle of circumference π.
pub fn orientation_difference(a: f64, b: f64) -> f64 {
    wrap_half_turn(a - b)
}

/// Unsigned distance between two orientations, modulo π.
pub fn orientation_distance(a: f64, b: f64) -> f64 {
    orientation_difference(a, b).abs()
}

/// Remove ±π jumps from a sequence of orientations so consecutive samples
/// differ by less than π/2.
pub fn unwrap_orientations(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len());
    let mut previous: Option<f64> = None;
    for &a in angles {
        let next = match previous {
            None => a,
            Some(p) => p + orientation_difference(a, p),
        };
        out.push(next);
        previous = Some(next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn wraps_into_half_open_interval() {
        assert_abs_diff_eq!(wrap_half_turn(FRAC_PI_2), -FRAC_PI_2);
        assert_abs_diff_eq!(wrap_half_turn(-FRAC_PI_2), -FRAC_PI_2);
        assert_abs_diff_eq!(wrap_half_turn(PI), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(wrap_half_turn(0.3 + 3.0 * PI), 0.3, epsilon = 1e-12);
    }

    #[test]
    fn distance_wraps_around() {
        let d = orientation_distance((-89f64).to_radians(), 89f64.to_radians());
        assert_abs_diff_eq!(d.to_degrees(), 2.0, epsilon = 1e-9);
    }

    #[test]
    fn unwrap_removes_jumps() {
        let raw = [80f64, 89.0, -88.0, -80.0].map(f64::to_radians);
        let un = unwrap_orientations(&raw);
        assert_abs_diff_eq!(un[2].to_degrees(), 92.0, epsilon = 1e-9);
        assert_abs_diff_eq!(un[3].to_degrees(), 100.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn wrap_is_idempotent_and_in_range(a in -100.0f64..100.0) {
            let w = wrap_half_turn(a);
            prop_assert!((-FRAC_PI_2..FRAC_PI_2).contains(&w));
            prop_assert!((wrap_half_turn(w) - w).abs() < 1e-12);
            // differs from the input by a multiple of π
            let k = (a - w) / PI;
            prop_assert!((k - k.round()).abs() < 1e-9);
        }
    }
}
