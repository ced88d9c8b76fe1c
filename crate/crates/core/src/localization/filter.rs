use ndarray::{Array2, Axis};
use std::f64::consts::PI;

/// Normalized 1D Gaussian kernel truncated at 4σ.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (4.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-half..=half).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn convolve_axis(input: &Array2<f64>, kernel: &[f64], axis: Axis) -> Array2<f64> {
    let half = (kernel.len() / 2) as isize;
    let mut out = Array2::zeros(input.raw_dim());
    for (src, mut dst) in input.lanes(axis).into_iter().zip(out.lanes_mut(axis)) {
        let n = src.len();
        for i in 0..n {
            dst[i] = kernel.iter().enumerate().map(|(k, w)| w * src[reflect(i as isize + k as isize - half, n)]).sum();
        }
    }
    out
}

/// Separable Gaussian blur whose frequency response is
/// `exp(−f²/(2·cutoff²))` (cutoff in cycles per pixel).
pub fn gaussian_lowpass(frame: &Array2<f64>, cutoff: f64) -> Array2<f64> {
    if !(cutoff > 0.0) || !cutoff.is_finite() {
        return frame.clone();
    }
    let sigma = 1.0 / (2.0 * PI * cutoff);
    let kernel = gaussian_kernel(sigma);
    let rows = convolve_axis(frame, &kernel, Axis(1));
    convolve_axis(&rows, &kernel, Axis(0))
}

/// Mean background subtraction followed by a Gaussian low-pass filter.
pub fn preprocess(frame: &Array2<f64>, cutoff: f64) -> Array2<f64> {
    let mean = frame.mean().unwrap_or(0.0);
    gaussian_lowpass(&frame.mapv(|v| v - mean), cutoff)
}

/// Robust standard deviation from the median absolute deviation.
pub fn mad_sigma(values: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    let med = median(&mut v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    1.4826 * median(&mut dev)
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
