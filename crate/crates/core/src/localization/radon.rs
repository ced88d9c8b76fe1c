//! Orientation of a two-lobe pattern from the zero-displacement line of its
//! Radon transform.

use crate::angle::wrap_half_turn;
use crate::fit::parabolic_peak;
use ndarray::{Array2, Axis};

/// Angular resolution of the final projection search.
pub const RADON_STEP_DEG: f64 = 0.01;
/// Coarse sampling used to bracket the maximum and judge degeneracy.
const COARSE_STEP_DEG: f64 = 0.5;
/// Patterns whose projection contrast `(max−min)/max` is below this are
/// reported as degenerate.
pub const DEGENERATE_CONTRAST: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadonEstimate {
    /// Lobe-axis angle in `[−π/2, π/2)`; 0 means lobes along +x (columns).
    pub angle: f64,
    /// `(max − min)/max` of the projection profile.
    pub contrast: f64,
    /// No unique maximum: flat profile or a competing distant maximum.
    pub degenerate: bool,
}

/// Cubic B-spline interpolant of a frame (mirror boundaries, zero outside).
///
/// Linear interpolation makes the line integral anisotropic and biases
/// the recovered angle by ~0.1° for well-sampled lobes; the cubic spline
/// keeps the bias below 0.001°.
pub struct SplineImage {
    coeffs: Array2<f64>,
}

fn prefilter_line(line: &mut [f64]) {
    let n = line.len();
    if n < 2 {
        return;
    }
    let z = 3f64.sqrt() - 2.0;
    line.iter_mut().for_each(|v| *v *= 6.0);
    // exact mirror-symmetric causal initialization
    let z2n = z.powi(2 * n as i32 - 2);
    let mut sum = line[0] + z.powi(n as i32 - 1) * line[n - 1];
    for (k, v) in line.iter().enumerate().take(n - 1).skip(1) {
        sum += (z.powi(k as i32) + z2n / z.powi(k as i32)) * v;
    }
    line[0] = sum / (1.0 - z2n);
    for k in 1..n {
        line[k] += z * line[k - 1];
    }
    line[n - 1] = (z / (z * z - 1.0)) * (line[n - 1] + z * line[n - 2]);
    for k in (0..n - 1).rev() {
        line[k] = z * (line[k + 1] - line[k]);
    }
}

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

fn bspline_weights(t: f64) -> [f64; 4] {
    let t2 = t * t;
    let t3 = t2 * t;
    [(1.0 - t).powi(3) / 6.0, (4.0 - 6.0 * t2 + 3.0 * t3) / 6.0, (1.0 + 3.0 * t + 3.0 * t2 - 3.0 * t3) / 6.0, t3 / 6.0]
}

impl SplineImage {
    pub fn new(frame: &Array2<f64>) -> Self {
        let mut coeffs = frame.clone();
        for axis in [Axis(1), Axis(0)] {
            for mut lane in coeffs.lanes_mut(axis) {
                let mut buf: Vec<f64> = lane.to_vec();
                prefilter_line(&mut buf);
                lane.iter_mut().zip(buf).for_each(|(v, b)| *v = b);
            }
        }
        Self { coeffs }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        let (rows, cols) = self.coeffs.dim();
        if x < 0.0 || y < 0.0 || x > (cols - 1) as f64 || y > (rows - 1) as f64 {
            return 0.0;
        }
        let (ix, iy) = (x.floor(), y.floor());
        let wx = bspline_weights(x - ix);
        let wy = bspline_weights(y - iy);
        let (ix, iy) = (ix as isize, iy as isize);
        let mut acc = 0.0;
        for (a, wya) in wy.iter().enumerate() {
            let r = mirror(iy + a as isize - 1, rows);
            let mut row = 0.0;
            for (b, wxb) in wx.iter().enumerate() {
                row += wxb * self.coeffs[[r, mirror(ix + b as isize - 1, cols)]];
            }
            acc += wya * row;
        }
        acc
    }

    /// Line integral through `center` along direction `angle`, sampled
    /// every half pixel.
    pub fn line_projection(&self, center: (f64, f64), angle: f64) -> f64 {
        let (rows, cols) = self.coeffs.dim();
        let reach = (rows.min(cols) as f64 / 2.0 - 1.0).max(1.0);
        let steps = (2.0 * reach) as isize;
        let (dx, dy) = (angle.cos() * 0.5, angle.sin() * 0.5);
        (-steps..=steps).map(|t| self.value(center.0 + t as f64 * dx, center.1 + t as f64 * dy)).sum::<f64>() * 0.5
    }
}

/// Intensity-weighted centroid of pixels above `fraction` of the maximum.
pub fn thresholded_centroid(frame: &Array2<f64>, fraction: f64) -> (f64, f64) {
    let max = frame.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = fraction * max;
    let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
    for ((r, c), &v) in frame.indexed_iter() {
        if v > level {
            let w = v - level;
            sx += w * c as f64;
            sy += w * r as f64;
            sw += w;
        }
    }
    if sw > 0.0 {
        (sx / sw, sy / sw)
    } else {
        let (rows, cols) = frame.dim();
        ((cols / 2) as f64, (rows / 2) as f64)
    }
}

/// Line integral of `frame` through `center` along direction `angle`.
pub fn line_projection(frame: &Array2<f64>, center: (f64, f64), angle: f64) -> f64 {
    SplineImage::new(frame).line_projection(center, angle)
}

/// Angle maximizing the zero-displacement Radon projection through
/// `center` (default: the 10%-thresholded centroid). A 0.5° scan over
/// `[−90°, 90°)` brackets the maximum, which is then located on a 0.01°
/// grid and refined parabolically.
pub fn radon_angle(frame: &Array2<f64>, center: Option<(f64, f64)>) -> RadonEstimate {
    let center = center.unwrap_or_else(|| thresholded_centroid(frame, 0.1));
    let spline = SplineImage::new(frame);
    let project = |deg: f64| spline.line_projection(center, deg.to_radians());

    let n = (180.0 / COARSE_STEP_DEG).round() as usize;
    let coarse: Vec<f64> = (0..n).map(|i| project(-90.0 + i as f64 * COARSE_STEP_DEG)).collect();
    let (imax, &max) = coarse.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty profile");
    let min = coarse.iter().copied().fold(f64::INFINITY, f64::min);
    let contrast = if max > 0.0 { (max - min) / max } else { 0.0 };

    let at = |i: isize| coarse[i.rem_euclid(n as isize) as usize];
    let far = (20.0 / COARSE_STEP_DEG) as isize;
    let rival = (0..n as isize)
        .filter(|&i| {
            let d = (i - imax as isize).rem_euclid(n as isize);
            d > far && d < n as isize - far && at(i) >= at(i - 1) && at(i) >= at(i + 1)
        })
        .map(at)
        .fold(f64::NEG_INFINITY, f64::max);
    let ambiguous = rival.is_finite() && max > 0.0 && (max - rival) / max < DEGENERATE_CONTRAST;

    let base = -90.0 + imax as f64 * COARSE_STEP_DEG - COARSE_STEP_DEG;
    let fine_n = (2.0 * COARSE_STEP_DEG / RADON_STEP_DEG).round() as usize + 1;
    let fine: Vec<f64> = (0..fine_n).map(|i| project(base + i as f64 * RADON_STEP_DEG)).collect();
    let (jmax, _) = fine.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty profile");
    let refined = if jmax == 0 || jmax + 1 == fine_n { jmax as f64 } else { parabolic_peak(&fine, jmax) };
    let angle = wrap_half_turn((base + refined * RADON_STEP_DEG).to_radians());
    RadonEstimate { angle, contrast, degenerate: contrast < DEGENERATE_CONTRAST || ambiguous }
}
