//! Synthetic camera frames of sparse lattice-trapped atom ensembles.
//!
//! Atoms sit on a cubic-like lattice (`lateral_spacing` in x and y,
//! `plane_spacing` between vertical planes). Each atom contributes a PSF
//! evaluated at its depth and shifted to its lateral position; the
//! expected frame is then corrupted by shot noise with an EM excess
//! factor and Gaussian read noise.

use crate::optics::{
    image_field_at, pupil_field, ComplexField, GridSpec, ImageWindow, OpticalTrain, OpticsError, PsfStack, PupilOptions,
};
use ndarray::{s, Array2, Axis};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("atom at z = {z} m lies outside the PSF range [{lo}, {hi}] m")]
    ZOutOfRange { z: f64, lo: f64, hi: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("camera pixel {fov} m does not match the PSF provider's {provider} m")]
    PixelMismatch { fov: f64, provider: f64 },
    #[error(transparent)]
    Optics(#[from] OpticsError),
}

// RNG stream layout: one stream per purpose, per-atom streams above the base.
const STREAM_COUNT: u64 = 0;
const STREAM_SITES: u64 = 1;
const STREAM_Z: u64 = 2;
const STREAM_PIXELS: u64 = 3;
const STREAM_ATOM_BASE: u64 = 1 << 32;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSpec {
    pub lateral_spacing: f64,
    pub plane_spacing: f64,
    /// Number of sites along x, y and z.
    pub extent: (usize, usize, usize),
}

impl Default for LatticeSpec {
    /// 612 nm sites, 532 nm planes, 100 × 100 sites on 11 planes (±5 planes).
    fn default() -> Self {
        Self { lateral_spacing: 612e-9, plane_spacing: 532e-9, extent: (100, 100, 11) }
    }
}

impl LatticeSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.lateral_spacing > 0.0 && self.plane_spacing > 0.0) {
            return Err(SynthError::InvalidParameter("lattice spacings must be positive".into()));
        }
        let (nx, ny, nz) = self.extent;
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(SynthError::InvalidParameter("lattice extent must be non-zero".into()));
        }
        Ok(())
    }

    pub fn site_count(&self) -> usize {
        self.extent.0 * self.extent.1 * self.extent.2
    }

    /// Object-space position of site `(i, j, k)`; the lattice is centered on
    /// the optical axis and the focal plane. Indices outside the extent are
    /// allowed (atoms may hop out of the loaded region).
    pub fn position(&self, site: [i64; 3]) -> (f64, f64, f64) {
        let c = |i: i64, n: usize| i as f64 - (n as f64 - 1.0) / 2.0;
        (
            c(site[0], self.extent.0) * self.lateral_spacing,
            c(site[1], self.extent.1) * self.lateral_spacing,
            c(site[2], self.extent.2) * self.plane_spacing,
        )
    }

    fn site_of(&self, flat: usize) -> [i64; 3] {
        let (nx, ny, _) = self.extent;
        [(flat % nx) as i64, ((flat / nx) % ny) as i64, (flat / (nx * ny)) as i64]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub site: Option<[i64; 3]>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AtomSet {
    pub atoms: Vec<Atom>,
}

impl AtomSet {
    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

fn draw_count(lattice: &LatticeSpec, mean_count: f64, seed: u64) -> Result<usize, SynthError> {
    lattice.validate()?;
    let sites = lattice.site_count();
    if !(mean_count > 0.0) || mean_count > sites as f64 {
        return Err(SynthError::InvalidParameter(format!("mean atom count {mean_count} must lie in (0, {sites}]")));
    }
    let poisson = Poisson::new(mean_count).map_err(|e| SynthError::InvalidParameter(e.to_string()))?;
    Ok((poisson.sample(&mut rng(seed, STREAM_COUNT)) as usize).min(sites))
}

/// Poisson-distributed number of atoms on distinct, uniformly drawn sites.
pub fn sample_atoms(lattice: &LatticeSpec, mean_count: f64, seed: u64) -> Result<AtomSet, SynthError> {
    let count = draw_count(lattice, mean_count, seed)?;
    let flat = sample(&mut rng(seed, STREAM_SITES), lattice.site_count(), count);
    let atoms = flat
        .into_iter()
        .map(|f| {
            let site = lattice.site_of(f);
            let (x, y, z) = lattice.position(site);
            Atom { x, y, z, site: Some(site) }
        })
        .collect();
    Ok(AtomSet { atoms })
}

/// Like [`sample_atoms`] but with depths drawn uniformly from `z_range`
/// instead of snapped to planes (used for calibration curves).
pub fn sample_atoms_continuous(
    lattice: &LatticeSpec,
    mean_count: f64,
    z_range: (f64, f64),
    seed: u64,
) -> Result<AtomSet, SynthError> {
    if !(z_range.0 <= z_range.1) {
        return Err(SynthError::InvalidParameter(format!("empty z range {z_range:?}")));
    }
    let mut set = sample_atoms(lattice, mean_count, seed)?;
    let mut r = rng(seed, STREAM_Z);
    for atom in &mut set.atoms {
        atom.z = r.random_range(z_range.0..=z_range.1);
        atom.site = None;
    }
    Ok(set)
}

/// Move each atom independently one plane down (probability `p_down`), one
/// plane up (`p_up`) or not at all. Atom `i` uses its own RNG stream.
pub fn hop_atoms(
    atoms: &AtomSet,
    lattice: &LatticeSpec,
    p_down: f64,
    p_up: f64,
    seed: u64,
) -> Result<AtomSet, SynthError> {
    let valid = |p: f64| (0.0..=1.0).contains(&p);
    if !valid(p_down) || !valid(p_up) || p_down + p_up > 1.0 {
        return Err(SynthError::InvalidParameter(format!(
            "hop probabilities ({p_down}, {p_up}) must lie in [0, 1] and sum to at most 1"
        )));
    }
    let atoms = atoms
        .atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let u: f64 = rng(seed, STREAM_ATOM_BASE + i as u64).random();
            let step = if u < p_down {
                -1
            } else if u < p_down + p_up {
                1
            } else {
                0
            };
            Atom { z: a.z + step as f64 * lattice.plane_spacing, site: a.site.map(|[i, j, k]| [i, j, k + step]), ..*a }
        })
        .collect();
    Ok(AtomSet { atoms })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Detected photons per atom inside the PSF rendering window.
    pub photons_per_atom: f64,
    /// Mean background per pixel (photons).
    pub background_mean: f64,
    /// Standard deviation of the additive read noise (photons).
    pub read_noise_sigma: f64,
    /// Variance multiplier of the gain register (1 = pure Poisson, 2 = high
    /// EM gain).
    pub excess_factor: f64,
    /// Draw shot noise; when false the frame is the expected image plus
    /// read noise.
    pub shot_noise: bool,
    pub seed: u64,
}

impl Default for NoiseModel {
    /// Synthetic defaults giving clearly resolved lobes on a weak background.
    fn default() -> Self {
        Self {
            photons_per_atom: 10_000.0,
            background_mean: 10.0,
            read_noise_sigma: 2.0,
            excess_factor: 2.0,
            shot_noise: true,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn noiseless(photons_per_atom: f64, background_mean: f64) -> Self {
        Self {
            photons_per_atom,
            background_mean,
            read_noise_sigma: 0.0,
            excess_factor: 1.0,
            shot_noise: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let ok = self.photons_per_atom >= 0.0
            && self.background_mean >= 0.0
            && self.read_noise_sigma >= 0.0
            && (1.0..=2.0).contains(&self.excess_factor);
        if ok {
            Ok(())
        } else {
            Err(SynthError::InvalidParameter(format!("invalid noise model {self:?}")))
        }
    }
}

/// Source of unit-sum PSF patches on the camera pixel grid.
pub trait PsfProvider: Sync {
    /// Object-space size of one camera pixel.
    fn pixel_size(&self) -> f64;
    /// Supported depth range (inclusive).
    fn z_range(&self) -> (f64, f64);
    /// Odd-sized patch whose center pixel contains the emitter, displaced by
    /// `(dx, dy)` camera pixels from that pixel's center. Sums to 1.
    fn render(&self, z: f64, dx: f64, dy: f64) -> Result<Array2<f64>, SynthError>;

    fn check_z(&self, z: f64) -> Result<(), SynthError> {
        let (lo, hi) = self.z_range();
        let eps = 1e-12 * (hi - lo).abs().max(1e-9);
        if z.is_finite() && z >= lo - eps && z <= hi + eps {
            Ok(())
        } else {
            Err(SynthError::ZOutOfRange { z, lo, hi })
        }
    }
}

fn check_binning(fine: usize, bin: usize) -> Result<usize, SynthError> {
    if bin == 0 || !fine.is_multiple_of(bin) || (fine / bin).is_multiple_of(2) {
        return Err(SynthError::InvalidParameter(format!(
            "window of {fine} samples must be an odd multiple of the bin factor {bin}"
        )));
    }
    Ok(fine / bin)
}

fn bin_and_normalize(fine: &Array2<f64>, bin: usize) -> Array2<f64> {
    let n = fine.nrows() / bin;
    let mut out = Array2::from_shape_fn((n, n), |(r, c)| {
        fine.slice(s![r * bin..(r + 1) * bin, c * bin..(c + 1) * bin]).iter().map(|v| v.max(0.0)).sum::<f64>()
    });
    let total = out.sum();
    if total > 0.0 {
        out /= total;
    }
    out
}

fn fft2(values: &mut Array2<Complex64>, inverse: bool) {
    let mut planner = FftPlanner::new();
    for axis in [Axis(1), Axis(0)] {
        let n = values.len_of(axis);
        let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for mut lane in values.lanes_mut(axis) {
            buf.iter_mut().zip(lane.iter()).for_each(|(b, v)| *b = *v);
            fft.process(&mut buf);
            lane.iter_mut().zip(&buf).for_each(|(v, b)| *v = *b);
        }
    }
}

/// Translate a sampled band-limited image by `(dx, dy)` samples with a
/// Fourier phase ramp (periodic boundaries).
pub fn fourier_shift(image: &Array2<f64>, dx: f64, dy: f64) -> Array2<f64> {
    let (rows, cols) = image.dim();
    let mut spec = image.mapv(|v| Complex64::new(v, 0.0));
    fft2(&mut spec, false);
    let freq = |k: usize, n: usize| match (2 * k).cmp(&n) {
        std::cmp::Ordering::Less => k as f64 / n as f64,
        // the Nyquist bin of even sizes gets no ramp so the result stays real
        std::cmp::Ordering::Equal => 0.0,
        std::cmp::Ordering::Greater => k as f64 / n as f64 - 1.0,
    };
    for ((r, c), v) in spec.indexed_iter_mut() {
        *v *= Complex64::from_polar(1.0, -2.0 * PI * (freq(c, cols) * dx + freq(r, rows) * dy));
    }
    fft2(&mut spec, true);
    let scale = 1.0 / (rows * cols) as f64;
    spec.mapv(|v| v.re * scale)
}

/// PSF patches interpolated linearly in z from a precomputed stack,
/// Fourier-shifted on the fine grid and binned onto camera pixels.
pub struct StackPsfProvider {
    stack: PsfStack,
    bin: usize,
}

impl StackPsfProvider {
    /// `stack` must have ascending depths and an odd multiple of `bin`
    /// samples per side.
    pub fn new(stack: PsfStack, bin: usize) -> Result<Self, SynthError> {
        if stack.is_empty() {
            return Err(SynthError::InvalidParameter("empty PSF stack".into()));
        }
        if stack.z_positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(SynthError::InvalidParameter("stack depths must be strictly ascending".into()));
        }
        check_binning(stack.frame_size(), bin)?;
        Ok(Self { stack, bin })
    }

    pub fn stack(&self) -> &PsfStack {
        &self.stack
    }

    fn frame_at(&self, z: f64) -> Array2<f64> {
        let zs = &self.stack.z_positions;
        let i = zs.partition_point(|&v| v <= z);
        if i == 0 {
            return self.stack.frames[0].clone();
        }
        if i == zs.len() {
            return self.stack.frames[zs.len() - 1].clone();
        }
        let t = (z - zs[i - 1]) / (zs[i] - zs[i - 1]);
        &self.stack.frames[i - 1] * (1.0 - t) + &self.stack.frames[i] * t
    }
}

impl PsfProvider for StackPsfProvider {
    fn pixel_size(&self) -> f64 {
        self.stack.pixel_pitch_object * self.bin as f64
    }

    fn z_range(&self) -> (f64, f64) {
        self.stack.z_range().expect("non-empty stack")
    }

    fn render(&self, z: f64, dx: f64, dy: f64) -> Result<Array2<f64>, SynthError> {
        self.check_z(z)?;
        let fine = self.frame_at(z);
        let b = self.bin as f64;
        let shifted = if dx == 0.0 && dy == 0.0 { fine } else { fourier_shift(&fine, dx * b, dy * b) };
        Ok(bin_and_normalize(&shifted, self.bin))
    }
}

/// PSF patches evaluated directly from the pupil field at the exact
/// emitter position (slower, no interpolation in z).
pub struct PupilPsfProvider {
    train: OpticalTrain,
    pupil: ComplexField,
    fine_pitch: f64,
    fine_n: usize,
    bin: usize,
    z_range: (f64, f64),
}

impl PupilPsfProvider {
    pub fn new(
        train: &OpticalTrain,
        grid: &GridSpec,
        options: &PupilOptions,
        pad_factor: usize,
        fine_n: usize,
        bin: usize,
        z_range: (f64, f64),
    ) -> Result<Self, SynthError> {
        if pad_factor < 1 {
            return Err(OpticsError::PadFactor(pad_factor).into());
        }
        check_binning(fine_n, bin)?;
        Ok(Self {
            train: train.clone(),
            pupil: pupil_field(train, grid, options)?,
            fine_pitch: train.image_pixel(grid, pad_factor),
            fine_n,
            bin,
            z_range,
        })
    }
}

impl PsfProvider for PupilPsfProvider {
    fn pixel_size(&self) -> f64 {
        self.fine_pitch * self.bin as f64 / self.train.lateral_magnification()
    }

    fn z_range(&self) -> (f64, f64) {
        self.z_range
    }

    fn render(&self, z: f64, dx: f64, dy: f64) -> Result<Array2<f64>, SynthError> {
        self.check_z(z)?;
        let step = self.fine_pitch * self.bin as f64;
        // sampling at x − s reproduces the PSF translated by s
        let window = ImageWindow { n: self.fine_n, pitch: self.fine_pitch, center: (-dx * step, -dy * step) };
        let field = image_field_at(&self.pupil, &self.train, &window, z)?;
        Ok(bin_and_normalize(&field.mapv(|v| v.norm_sqr()), self.bin))
    }
}

/// Camera pixel coordinates `(col, row)` of an object-space lateral
/// position on `fov` (optical axis at pixel `n/2`).
pub fn object_to_pixel(fov: &GridSpec, x: f64, y: f64) -> (f64, f64) {
    let c = fov.center() as f64;
    (c + x / fov.pitch, c + y / fov.pitch)
}

/// Expected photon image: background plus `photons_per_atom` times each
/// atom's PSF. Patches falling partly outside the frame are clipped.
pub fn expected_frame(
    atoms: &AtomSet,
    provider: &dyn PsfProvider,
    photons_per_atom: f64,
    background_mean: f64,
    fov: &GridSpec,
) -> Result<Array2<f64>, SynthError> {
    let (p_fov, p_psf) = (fov.pitch, provider.pixel_size());
    if ((p_fov - p_psf) / p_psf).abs() > 1e-9 {
        return Err(SynthError::PixelMismatch { fov: p_fov, provider: p_psf });
    }
    let patches = atoms
        .atoms
        .par_iter()
        .map(|a| {
            let (px, py) = object_to_pixel(fov, a.x, a.y);
            let (cx, cy) = (px.round(), py.round());
            Ok((cx as i64, cy as i64, provider.render(a.z, px - cx, py - cy)?))
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    let n = fov.n as i64;
    let mut frame = Array2::from_elem((fov.n, fov.n), background_mean);
    for (cx, cy, patch) in patches {
        let half = (patch.nrows() / 2) as i64;
        for ((r, c), v) in patch.indexed_iter() {
            let (fr, fc) = (cy + r as i64 - half, cx + c as i64 - half);
            if (0..n).contains(&fr) && (0..n).contains(&fc) {
                frame[[fr as usize, fc as usize]] += photons_per_atom * v;
            }
        }
    }
    Ok(frame)
}

/// Shot noise (Poisson, broadened to variance `F·λ` by the gain register)
/// followed by Gaussian read noise; negative readouts clip to zero.
pub fn apply_noise(expected: &Array2<f64>, noise: &NoiseModel) -> Result<Array2<f64>, SynthError> {
    noise.validate()?;
    let mut r = rng(noise.seed, STREAM_PIXELS);
    let read = Normal::new(0.0, noise.read_noise_sigma).map_err(|e| SynthError::InvalidParameter(e.to_string()))?;
    let excess = noise.excess_factor - 1.0;
    Ok(expected.mapv(|lambda| {
        let mut v = lambda;
        if noise.shot_noise {
            v = if lambda > 0.0 { Poisson::new(lambda).map(|p| p.sample(&mut r)).unwrap_or(lambda) } else { 0.0 };
            if excess > 0.0 && v > 0.0 {
                v = Gamma::new(v / excess, excess).map(|g| g.sample(&mut r)).unwrap_or(v);
            }
        }
        if noise.read_noise_sigma > 0.0 {
            v += read.sample(&mut r);
        }
        v.max(0.0)
    }))
}

/// One camera frame of `atoms` under `noise`.
pub fn synthesize_frame(
    atoms: &AtomSet,
    provider: &dyn PsfProvider,
    noise: &NoiseModel,
    fov: &GridSpec,
) -> Result<Array2<f64>, SynthError> {
    noise.validate()?;
    let expected = expected_frame(atoms, provider, noise.photons_per_atom, noise.background_mean, fov)?;
    apply_noise(&expected, noise)
}
