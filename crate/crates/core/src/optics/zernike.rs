//! Noll-indexed, Noll-normalized Zernike polynomials (`∫ Z_j² dA = π` on
//! the unit disk). Coefficients are waves of RMS wavefront error.

use super::{GridSpec, OpticsError};
use ndarray::Array2;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZernikeTerm {
    pub noll: u32,
    /// RMS wavefront error in waves.
    pub waves: f64,
}

impl ZernikeTerm {
    pub const SUPPORTED: std::ops::RangeInclusive<u32> = 4..=13;

    pub fn new(noll: u32, waves: f64) -> Result<Self, OpticsError> {
        if !Self::SUPPORTED.contains(&noll) {
            return Err(OpticsError::NollOutOfRange(noll));
        }
        Ok(Self { noll, waves })
    }

    /// Conventional name. Orientation labels refer to a lobe axis along x:
    /// Noll 6 (`cos 2φ`) is the lobe-axis-aligned astigmatism.
    pub fn name(noll: u32) -> &'static str {
        match noll {
            4 => "defocus",
            5 => "oblique astigmatism",
            6 => "vertical astigmatism",
            7 => "vertical coma",
            8 => "horizontal coma",
            9 => "vertical trefoil",
            10 => "oblique trefoil",
            11 => "primary spherical",
            12 => "vertical secondary astigmatism",
            13 => "oblique secondary astigmatism",
            _ => "unsupported",
        }
    }
}

/// Radial order `n` and signed azimuthal order `m` of Noll index `j`;
/// negative `m` denotes a `sin(|m|φ)` term.
pub fn noll_to_nm(j: u32) -> (u32, i32) {
    assert!(j >= 1, "Noll indices start at 1");
    let mut n = 0u32;
    while (n + 1) * (n + 2) / 2 < j {
        n += 1;
    }
    let first = n * (n + 1) / 2 + 1;
    let k = j - first; // position within the radial order
    let m = if n.is_multiple_of(2) { 2 * k.div_ceil(2) } else { 2 * (k / 2) + 1 };
    let sign = if m != 0 && j % 2 == 1 { -1 } else { 1 };
    (n, sign * m as i32)
}

fn radial(n: u32, m: u32, rho: f64) -> f64 {
    let fact = |k: u32| (1..=k).map(f64::from).product::<f64>();
    (0..=(n - m) / 2)
        .map(|s| {
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            sign * fact(n - s) / (fact(s) * fact((n + m) / 2 - s) * fact((n - m) / 2 - s))
                * rho.powi((n - 2 * s) as i32)
        })
        .sum()
}

/// `Z_j(ρ, φ)` for any Noll index, without checking `ρ ≤ 1`.
pub fn zernike_value(j: u32, rho: f64, phi: f64) -> f64 {
    let (n, m) = noll_to_nm(j);
    let am = m.unsigned_abs();
    let r = radial(n, am, rho);
    if m == 0 {
        ((n + 1) as f64).sqrt() * r
    } else {
        let norm = (2.0 * (n + 1) as f64).sqrt();
        let angular = if m > 0 { (am as f64 * phi).cos() } else { (am as f64 * phi).sin() };
        norm * r * angular
    }
}

/// Phase `2π·Σ W_j·Z_j` over the pupil disk of radius `radius_px`, zero
/// outside.
pub fn zernike_phase(grid: &GridSpec, radius_px: f64, terms: &[ZernikeTerm]) -> Result<Array2<f64>, OpticsError> {
    for t in terms {
        ZernikeTerm::new(t.noll, t.waves)?;
    }
    Ok(Array2::from_shape_fn((grid.n, grid.n), |(row, col)| {
        let x = grid.offset_px(col) / radius_px;
        let y = grid.offset_px(row) / radius_px;
        let rho = x.hypot(y);
        if rho > 1.0 || terms.is_empty() {
            return 0.0;
        }
        let phi = y.atan2(x);
        2.0 * PI * terms.iter().map(|t| t.waves * zernike_value(t.noll, rho, phi)).sum::<f64>()
    }))
}
