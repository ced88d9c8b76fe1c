use super::filter::mad_sigma;
use super::{Peak, PipelineConfig};
use crate::fit::parabolic_peak;
use ndarray::Array2;

/// Local maxima above `max(threshold·σ_MAD, relative_threshold·max)`,
/// thinned greedily (brightest first) to `peak_min_distance`, with
/// separable parabolic subpixel refinement.
pub fn find_peaks(filtered: &Array2<f64>, config: &PipelineConfig) -> Vec<Peak> {
    let (rows, cols) = filtered.dim();
    if rows < 3 || cols < 3 {
        return Vec::new();
    }
    let max = filtered.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let level = (config.threshold * mad_sigma(filtered)).max(config.relative_threshold * max);
    let mut candidates = Vec::new();
    for r in 1..rows - 1 {
        for c in 1..cols - 1 {
            let v = filtered[[r, c]];
            if v <= level {
                continue;
            }
            let is_max = (r - 1..=r + 1)
                .flat_map(|rr| (c - 1..=c + 1).map(move |cc| (rr, cc)))
                .all(|(rr, cc)| filtered[[rr, cc]] <= v);
            if is_max {
                candidates.push((r, c, v));
            }
        }
    }
    candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut peaks: Vec<Peak> = Vec::new();
    for (r, c, v) in candidates {
        let row: Vec<f64> = (c - 1..=c + 1).map(|cc| filtered[[r, cc]]).collect();
        let col: Vec<f64> = (r - 1..=r + 1).map(|rr| filtered[[rr, c]]).collect();
        let x = c as f64 - 1.0 + parabolic_peak(&row, 1);
        let y = r as f64 - 1.0 + parabolic_peak(&col, 1);
        let far = peaks.iter().all(|p| (p.x - x).hypot(p.y - y) >= config.peak_min_distance);
        if far {
            peaks.push(Peak { x, y, amplitude: v });
        }
    }
    peaks
}

/// Gate-passing peak pairs whose members take part in no other
/// gate-passing pair.
pub fn pair_peaks(peaks: &[Peak], config: &PipelineConfig) -> Vec<(Peak, Peak)> {
    let (d_min, d_max) = config.pair_gate;
    let mut candidates = Vec::new();
    let mut uses = vec![0usize; peaks.len()];
    for i in 0..peaks.len() {
        for j in i + 1..peaks.len() {
            let d = (peaks[i].x - peaks[j].x).hypot(peaks[i].y - peaks[j].y);
            if d >= d_min && d <= d_max {
                candidates.push((i, j));
                uses[i] += 1;
                uses[j] += 1;
            }
        }
    }
    candidates.into_iter().filter(|&(i, j)| uses[i] == 1 && uses[j] == 1).map(|(i, j)| (peaks[i], peaks[j])).collect()
}
