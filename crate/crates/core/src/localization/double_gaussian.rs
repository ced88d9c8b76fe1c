use super::{AngleMethod, Detection, LocalizationError, Peak, PipelineConfig};
use crate::angle::wrap_half_turn;
use crate::fit::{levenberg_marquardt, LmConfig};
use ndarray::Array2;

/// One elliptical Gaussian lobe in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lobe {
    pub x: f64,
    pub y: f64,
    pub amplitude: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Correlation coefficient of the ellipse, in (−1, 1).
    pub rho: f64,
}

impl Lobe {
    pub fn value(&self, x: f64, y: f64) -> f64 {
        let dx = (x - self.x) / self.sigma_x;
        let dy = (y - self.y) / self.sigma_y;
        let q = (dx * dx - 2.0 * self.rho * dx * dy + dy * dy) / (1.0 - self.rho * self.rho);
        self.amplitude * (-0.5 * q).exp()
    }

    fn params(&self) -> [f64; 6] {
        [self.x, self.y, self.amplitude, self.sigma_x, self.sigma_y, self.rho.atanh()]
    }

    fn from_params(p: &[f64]) -> Self {
        Self { x: p[0], y: p[1], amplitude: p[2], sigma_x: p[3].abs(), sigma_y: p[4].abs(), rho: p[5].tanh() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleGaussianFit {
    pub lobes: [Lobe; 2],
    pub background: f64,
    /// Root-mean-square residual over the crop.
    pub rms_residual: f64,
    /// One-sigma uncertainty of the lobe-axis angle (radians), if available.
    pub theta_sigma: Option<f64>,
    pub iterations: usize,
}

impl DoubleGaussianFit {
    pub fn center(&self) -> (f64, f64) {
        let [a, b] = self.lobes;
        (0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
    }

    pub fn separation(&self) -> f64 {
        let [a, b] = self.lobes;
        (a.x - b.x).hypot(a.y - b.y)
    }

    /// Orientation of the lobe axis in `[−π/2, π/2)`.
    pub fn theta(&self) -> f64 {
        let [a, b] = self.lobes;
        wrap_half_turn((b.y - a.y).atan2(b.x - a.x))
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.background + self.lobes[0].value(x, y) + self.lobes[1].value(x, y)
    }
}

/// Pixels of the square crop of half-width `radius` around `(cx, cy)`.
fn crop(frame: &Array2<f64>, cx: f64, cy: f64, radius: usize) -> Result<Vec<(f64, f64, f64)>, LocalizationError> {
    let (rows, cols) = frame.dim();
    let (r0, c0) = (cy.round() as isize - radius as isize, cx.round() as isize - radius as isize);
    let size = 2 * radius as isize + 1;
    if r0 < 0 || c0 < 0 || r0 + size > rows as isize || c0 + size > cols as isize {
        return Err(LocalizationError::CropOutOfBounds { x: cx, y: cy, radius });
    }
    let mut pixels = Vec::with_capacity((size * size) as usize);
    for r in r0..r0 + size {
        for c in c0..c0 + size {
            pixels.push((c as f64, r as f64, frame[[r as usize, c as usize]]));
        }
    }
    Ok(pixels)
}

/// Least-squares fit of two elliptical Gaussians plus a constant to the
/// crop centered between the two peaks of `pair`.
pub fn fit_double_gaussian_lobes(
    frame: &Array2<f64>,
    pair: &(Peak, Peak),
    config: &PipelineConfig,
) -> Result<DoubleGaussianFit, LocalizationError> {
    let (p, q) = pair;
    let (cx, cy) = (0.5 * (p.x + q.x), 0.5 * (p.y + q.y));
    let pixels = crop(frame, cx, cy, config.crop_radius)?;
    let mut border: Vec<f64> = {
        let lo_x = pixels.iter().map(|t| t.0).fold(f64::INFINITY, f64::min);
        let hi_x = pixels.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let lo_y = pixels.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        let hi_y = pixels.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
        pixels.iter().filter(|t| t.0 == lo_x || t.0 == hi_x || t.1 == lo_y || t.1 == hi_y).map(|t| t.2).collect()
    };
    let background = super::filter::median(&mut border);
    let sample = |x: f64, y: f64| frame[[y.round() as usize, x.round() as usize]] - background;
    let s = config.lobe_sigma;
    let start = |pk: &Peak| Lobe {
        x: pk.x,
        y: pk.y,
        amplitude: sample(pk.x, pk.y).max(1e-12),
        sigma_x: s,
        sigma_y: s,
        rho: 0.0,
    };
    let mut x0 = Vec::with_capacity(13);
    x0.extend(start(p).params());
    x0.extend(start(q).params());
    x0.push(background);

    let scale = pixels.iter().map(|t| t.2.abs()).fold(0.0, f64::max).max(1e-12);
    let mut typical = vec![1.0; 13];
    for i in [2, 8, 12] {
        typical[i] = scale;
    }
    let lm = LmConfig { typical_scale: Some(typical), max_iterations: config.max_iterations, ..LmConfig::default() };
    let residuals = |params: &[f64]| {
        let a = Lobe::from_params(&params[0..6]);
        let b = Lobe::from_params(&params[6..12]);
        pixels.iter().map(|&(x, y, v)| params[12] + a.value(x, y) + b.value(x, y) - v).collect::<Vec<f64>>()
    };
    let report = levenberg_marquardt(residuals, &x0, &lm)?;
    let fit = DoubleGaussianFit {
        lobes: [Lobe::from_params(&report.params[0..6]), Lobe::from_params(&report.params[6..12])],
        background: report.params[12],
        rms_residual: (report.ssr / pixels.len() as f64).sqrt(),
        theta_sigma: report.covariance.as_ref().map(|c| theta_sigma(&report.params, c)),
        iterations: report.iterations,
    };
    let sep = fit.separation();
    if !(sep >= 0.5 * config.pair_gate.0) || fit.lobes.iter().any(|l| l.amplitude <= 0.0) {
        return Err(LocalizationError::DegenerateFit { separation: sep });
    }
    Ok(fit)
}

/// Linearized uncertainty of `atan2(y2−y1, x2−x1)`.
fn theta_sigma(params: &[f64], cov: &nalgebra::DMatrix<f64>) -> f64 {
    let (dx, dy) = (params[6] - params[0], params[7] - params[1]);
    let d2 = dx * dx + dy * dy;
    // gradient with respect to (x1, y1, x2, y2)
    let g = [dy / d2, -dx / d2, -dy / d2, dx / d2];
    let idx = [0, 1, 6, 7];
    let mut var = 0.0;
    for a in 0..4 {
        for b in 0..4 {
            var += g[a] * g[b] * cov[(idx[a], idx[b])];
        }
    }
    var.max(0.0).sqrt()
}

/// Double-Gaussian detection: center at the midpoint of the lobes, angle of
/// the lobe axis in `[−π/2, π/2)`.
pub fn fit_double_gaussian(
    frame: &Array2<f64>,
    pair: &(Peak, Peak),
    config: &PipelineConfig,
) -> Result<Detection, LocalizationError> {
    let fit = fit_double_gaussian_lobes(frame, pair, config)?;
    let (x, y) = fit.center();
    Ok(Detection::new(x, y, fit.theta(), fit.separation(), fit.rms_residual, AngleMethod::DoubleGaussian, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn synthetic(theta: f64, sep: f64, lobe: Lobe, bg: f64) -> (Array2<f64>, [Lobe; 2]) {
        let (cx, cy) = (20.3, 19.6);
        let (ux, uy) = (theta.cos() * sep / 2.0, theta.sin() * sep / 2.0);
        let a = Lobe { x: cx - ux, y: cy - uy, ..lobe };
        let b = Lobe { x: cx + ux, y: cy + uy, amplitude: lobe.amplitude * 0.9, ..lobe };
        let f =
            Array2::from_shape_fn((40, 40), |(r, c)| bg + a.value(c as f64, r as f64) + b.value(c as f64, r as f64));
        (f, [a, b])
    }

    fn pair_for(lobes: &[Lobe; 2]) -> (Peak, Peak) {
        let p = |l: &Lobe| Peak { x: l.x.round() + 0.2, y: l.y.round() - 0.3, amplitude: l.amplitude };
        (p(&lobes[0]), p(&lobes[1]))
    }

    fn lobe() -> Lobe {
        Lobe { x: 0.0, y: 0.0, amplitude: 100.0, sigma_x: 1.8, sigma_y: 1.4, rho: 0.1 }
    }

    #[test]
    fn axis_aligned_lobes_give_zero_angle() {
        let (f, lobes) = synthetic(0.0, 9.0, lobe(), 5.0);
        let cfg = PipelineConfig::default();
        let det = fit_double_gaussian(&f, &pair_for(&lobes), &cfg).unwrap();
        assert!(det.theta.to_degrees().abs() < 0.05);
    }

    #[test]
    fn rotated_lobes_give_rotation_angle() {
        let (f, lobes) = synthetic(30f64.to_radians(), 9.0, lobe(), 5.0);
        let det = fit_double_gaussian(&f, &pair_for(&lobes), &PipelineConfig::default()).unwrap();
        assert_abs_diff_eq!(det.theta.to_degrees(), 30.0, epsilon = 0.1);
        let (f, lobes) = synthetic(-70f64.to_radians(), 9.0, lobe(), 5.0);
        let det = fit_double_gaussian(&f, &pair_for(&lobes), &PipelineConfig::default()).unwrap();
        assert_abs_diff_eq!(det.theta.to_degrees(), -70.0, epsilon = 0.1);
    }

    #[test]
    fn recovers_planted_parameters() {
        let (f, planted) = synthetic(0.4, 8.0, lobe(), 5.0);
        let fit = fit_double_gaussian_lobes(&f, &pair_for(&planted), &PipelineConfig::default()).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 0.01 * b.abs().max(1.0);
        let mut found = fit.lobes;
        if (found[0].x - planted[0].x).abs() > 1.0 {
            found.swap(0, 1);
        }
        for (got, want) in found.iter().zip(&planted) {
            assert!(close(got.x, want.x) && close(got.y, want.y));
            assert!(close(got.amplitude, want.amplitude));
            assert!(close(got.sigma_x, want.sigma_x) && close(got.sigma_y, want.sigma_y));
            assert!((got.rho - want.rho).abs() < 0.01);
        }
        assert!(close(fit.separation(), 8.0));
        assert!(close(fit.background, 5.0));
        assert!(fit.rms_residual < 1e-6);
    }

    #[test]
    fn crop_outside_frame_is_rejected() {
        let (f, _) = synthetic(0.0, 9.0, lobe(), 5.0);
        let edge = (Peak { x: 1.0, y: 1.0, amplitude: 1.0 }, Peak { x: 3.0, y: 1.0, amplitude: 1.0 });
        assert!(matches!(
            fit_double_gaussian(&f, &edge, &PipelineConfig::default()),
            Err(LocalizationError::CropOutOfBounds { .. })
        ));
    }

    #[test]
    fn single_lobe_is_degenerate() {
        let l = Lobe { x: 20.0, y: 20.0, ..lobe() };
        let f = Array2::from_shape_fn((40, 40), |(r, c)| l.value(c as f64, r as f64));
        let pair = (Peak { x: 17.0, y: 20.0, amplitude: 1.0 }, Peak { x: 23.0, y: 20.0, amplitude: 1.0 });
        let r = fit_double_gaussian(&f, &pair, &PipelineConfig::default());
        assert!(matches!(r, Err(LocalizationError::DegenerateFit { .. }) | Err(LocalizationError::Fit(_))), "{r:?}");
    }
}
