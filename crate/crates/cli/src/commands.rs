//! One function per subcommand. Each writes its artifacts into `out` and
//! returns their paths.

use crate::config::{parse_list, parse_range, LawSource, Quantity, RunConfig};
use crate::error::{numeric, CliError};
use dhpsf::aberration::{zernike_scan, ScanSettings};
use dhpsf::angle::orientation_difference;
use dhpsf::calibration::{
    calibrate_from_psf, fit_calibration, post_select, synthetic_dataset, AnglePair, AnglePairDataset, CalibrationResult,
};
use dhpsf::fisher::fisher_curve;
use dhpsf::io::{
    read_dataset, read_detections, read_meta, read_stack_file, write_atoms, write_dataset, write_detections,
    write_fisher, write_meta, write_phase_png, write_scan, write_stack_file, DetectionRecord, Provenance,
};
use dhpsf::lgmodes::{BeamGeometry, LgSuperposition, RotationLaw};
use dhpsf::localization::localize_frame;
use dhpsf::optics::{
    dh_phase_mask, holographic_lens_phase, lens_for_shift, psf_stack, wrap_phase, PsfStack, PupilOptions,
};
use dhpsf::synth::{sample_atoms, synthesize_frame, AtomSet, PsfProvider, StackPsfProvider};
use ndarray::Array2;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Sampling step of PSF stacks built on the fly, in plane spacings.
const STACK_STEP_DZ: f64 = 0.1;
/// Sampling step of the PSF rotation-law calibration, in plane spacings.
const LAW_STEP_DZ: f64 = 0.25;

fn provenance(cfg: &RunConfig, command: &str, seed: Option<u64>) -> Provenance {
    Provenance::new(TOOL_VERSION, &cfg.hash(), seed).with("command", command)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| at(path, e))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| at(path, e))
}

fn at(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn meta_with(prov: &Provenance, extra: Vec<(String, String)>) -> Vec<(String, String)> {
    prov.entries.iter().cloned().chain(extra).collect()
}

fn nm_list(values: &[f64]) -> String {
    values.iter().map(|v| format!("{:.4}", v * 1e9)).collect::<Vec<_>>().join(",")
}

fn parse_nm_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map(|v| v * 1e-9).map_err(|_| CliError::Io(format!("bad number {t:?} in sidecar")))
        })
        .collect()
}

/// splitmix64 finalizer, used to derive per-shot and per-frame seeds.
fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Phase pattern shown on the SLM: mask plus holographic lens, wrapped,
/// and zero outside the pupil disk.
pub fn mask(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.require_double_helix()?;
    let train = cfg.optical_train()?;
    let grid = cfg.grid()?;
    let radius = train.pupil_radius_px() * train.slm_pitch / grid.pitch;
    let dh = dh_phase_mask(&grid, radius / cfg.mask.a_over_w0).map_err(numeric)?;
    let f_hol = lens_for_shift(&train, cfg.length(cfg.mask.lens_shift)?);
    let lens = holographic_lens_phase(&grid, f_hol, train.wavelength);
    let phase = Array2::from_shape_fn((grid.n, grid.n), |(r, c)| {
        if grid.offset_px(c).hypot(grid.offset_px(r)) > radius {
            0.0
        } else {
            wrap_phase(dh[[r, c]] + lens[[r, c]])
        }
    });
    let prov = provenance(cfg, "mask", None);
    let (png, raw, meta) = (out.join("mask.png"), out.join("mask.dhf"), out.join("mask.meta"));
    write_phase_png(&png, &phase)?;
    write_stack_file(&raw, &[phase], grid.pitch)?;
    let extra = vec![
        ("na".to_string(), train.na.to_string()),
        ("pupil_radius_px".to_string(), format!("{radius:.4}")),
        ("a_over_w0".to_string(), cfg.mask.a_over_w0.to_string()),
        ("lens_focal_length_m".to_string(), f_hol.map_or("none".to_string(), |f| format!("{f:.6e}"))),
    ];
    write_meta(&meta, &meta_with(&prov, extra))?;
    Ok(vec![png, raw, meta])
}

fn pupil_options(cfg: &RunConfig) -> Result<PupilOptions, CliError> {
    cfg.require_double_helix()?;
    let train = cfg.optical_train()?;
    let grid = cfg.grid()?;
    Ok(PupilOptions::double_helix(&train, &grid, cfg.mask.a_over_w0)
        .map_err(numeric)?
        .with_zernikes(cfg.aberrations()?)
        .with_lens(lens_for_shift(&train, cfg.length(cfg.mask.lens_shift)?)))
}

fn simulate_stack(cfg: &RunConfig, z: &[f64]) -> Result<PsfStack, CliError> {
    let pupil = pupil_options(cfg)?;
    psf_stack(&cfg.optical_train()?, &cfg.grid()?, &pupil, z, &cfg.stack_options()).map_err(numeric)
}

/// PSF stack at the simulation pixel over `range` (`lo:hi:step`).
pub fn simulate(cfg: &RunConfig, range: &str, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let z = parse_range(cfg, range)?;
    let stack = simulate_stack(cfg, &z)?;
    let prov = provenance(cfg, "simulate", None);
    let (raw, meta) = (out.join("psf.dhf"), out.join("psf.meta"));
    write_stack_file(&raw, &stack.frames, stack.pixel_pitch_object)?;
    write_meta(&meta, &meta_with(&prov, vec![("z_nm".to_string(), nm_list(&stack.z_positions))]))?;
    Ok(vec![raw, meta])
}

fn load_stack(path: &Path) -> Result<PsfStack, CliError> {
    let (frames, pitch) = read_stack_file(path).map_err(|e| at(path, e))?;
    let meta_path = path.with_extension("meta");
    let meta = read_meta(&meta_path).map_err(|e| at(&meta_path, e))?;
    let z = meta
        .iter()
        .find(|(k, _)| k == "z_nm")
        .ok_or_else(|| CliError::Io(format!("{} has no z_nm entry", path.with_extension("meta").display())))?;
    let z_positions = parse_nm_list(&z.1)?;
    if z_positions.len() != frames.len() {
        return Err(CliError::Io(format!("{} frames but {} depths", frames.len(), z_positions.len())));
    }
    Ok(PsfStack { z_positions, frames, pixel_pitch_object: pitch })
}

/// Camera PSF model, either from a stored stack or simulated over `±half`.
fn provider(cfg: &RunConfig, psf: Option<&Path>, half: f64) -> Result<StackPsfProvider, CliError> {
    let stack = match psf {
        Some(path) => load_stack(path)?,
        None => {
            let dz = cfg.plane_spacing()?;
            let n = (half / (STACK_STEP_DZ * dz)).ceil() as i64;
            let z: Vec<f64> = (-n..=n).map(|k| k as f64 * STACK_STEP_DZ * dz).collect();
            simulate_stack(cfg, &z)?
        }
    };
    StackPsfProvider::new(stack, cfg.grid.bin).map_err(numeric)
}

fn rotation_law(cfg: &RunConfig, provider: Option<&StackPsfProvider>) -> Result<RotationLaw, CliError> {
    match cfg.calibration.law {
        LawSource::Explicit => cfg.explicit_law(),
        LawSource::Psf => {
            let owned;
            let p = match provider {
                Some(p) => p,
                None => {
                    owned = self::provider(cfg, None, cfg.length(cfg.calibration.psf_range)?)?;
                    &owned
                }
            };
            let dz = cfg.plane_spacing()?;
            let half = cfg.length(cfg.calibration.psf_range)?;
            let n = (half / (LAW_STEP_DZ * dz)).round() as i64;
            let z: Vec<f64> = (-n..=n).map(|k| k as f64 * LAW_STEP_DZ * dz).collect();
            let pipeline = cfg.pipeline(p.pixel_size())?;
            Ok(calibrate_from_psf(p, &pipeline, &z, Some(cfg.calibration.rate))?.law)
        }
    }
}

pub struct SynthArgs<'a> {
    pub seed: u64,
    pub shots: usize,
    /// Focal-plane shifts of the middle image in the three-image protocol;
    /// empty for one plain frame per shot.
    pub shifts: Option<&'a str>,
    pub psf: Option<&'a Path>,
}

/// Synthetic camera frames of random lattice fillings plus ground truth.
pub fn synth(cfg: &RunConfig, args: &SynthArgs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let lattice = cfg.lattice()?;
    let shifts: Vec<f64> = match args.shifts {
        Some(s) => parse_list(s)?.into_iter().map(|q| cfg.length(q)).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    if args.shots == 0 {
        return Err(CliError::Config("at least one shot is required".into()));
    }
    let reach = (lattice.extent.2 as f64 - 1.0) / 2.0 * lattice.plane_spacing;
    let max_shift = shifts.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let provider = provider(cfg, args.psf, reach + max_shift + 0.5 * lattice.plane_spacing)?;
    let fov = cfg_fov(cfg, &provider)?;

    let mut frames = Vec::new();
    let mut focus = Vec::new();
    let mut truth: Vec<(usize, AtomSet)> = Vec::new();
    for shot in 0..args.shots {
        let atoms = sample_atoms(&lattice, cfg.lattice.mean_atoms, mix(args.seed, shot as u64)).map_err(numeric)?;
        let plan = if shifts.is_empty() { vec![0.0] } else { vec![0.0, shifts[shot % shifts.len()], 0.0] };
        for delta in plan {
            // moving the focal plane by Δ images an atom at z as one at z − Δ
            let seen =
                AtomSet { atoms: atoms.atoms.iter().map(|a| dhpsf::synth::Atom { z: a.z - delta, ..*a }).collect() };
            let noise = cfg.noise(mix(args.seed ^ 0xF4A3, frames.len() as u64));
            frames.push(synthesize_frame(&seen, &provider, &noise, &fov).map_err(numeric)?);
            truth.push((focus.len(), atoms.clone()));
            focus.push(delta);
        }
    }

    let prov = provenance(cfg, "synth", Some(args.seed));
    let (raw, meta, csv) = (out.join("frames.dhf"), out.join("frames.meta"), out.join("atoms.csv"));
    write_stack_file(&raw, &frames, fov.pitch)?;
    let extra = vec![
        ("frames_per_shot".to_string(), if shifts.is_empty() { "1" } else { "3" }.to_string()),
        ("focus_shift_nm".to_string(), nm_list(&focus)),
    ];
    write_meta(&meta, &meta_with(&prov, extra))?;
    let refs: Vec<(usize, &AtomSet)> = truth.iter().map(|(i, a)| (*i, a)).collect();
    write_atoms(create(&csv)?, &prov, &refs)?;
    Ok(vec![raw, meta, csv])
}

fn cfg_fov(cfg: &RunConfig, provider: &StackPsfProvider) -> Result<dhpsf::optics::GridSpec, CliError> {
    dhpsf::optics::GridSpec::new(cfg.grid.camera_size, provider.pixel_size())
        .map_err(|e| CliError::Config(e.to_string()))
}

/// Detections for every frame of a stack file.
pub fn localize(cfg: &RunConfig, frames_path: &Path, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (frames, pitch) = read_stack_file(frames_path).map_err(|e| at(frames_path, e))?;
    let expected = cfg.optical_train()?.object_pixel(&cfg.grid()?, cfg.grid.pad_factor) * cfg.grid.bin as f64;
    if ((pitch - expected) / expected).abs() > 1e-6 {
        return Err(CliError::Config(format!(
            "frames have {:.3} nm pixels but the configured camera pixel is {:.3} nm",
            pitch * 1e9,
            expected * 1e9
        )));
    }
    let law = rotation_law(cfg, None)?;
    let pipeline = cfg.pipeline(pitch)?;
    let results = frames
        .iter()
        .map(|f| localize_frame(f, &pipeline, &law).map(|r| r.detections))
        .collect::<Result<Vec<_>, _>>()
        .map_err(numeric)?;
    let prov = provenance(cfg, "localize", None)
        .with("law_rate", law.rate)
        .with("law_rayleigh_length_nm", format!("{:.3}", law.rayleigh_length * 1e9))
        .with("law_alpha_deg", format!("{:.4}", law.alpha.to_degrees()));
    let refs: Vec<(usize, &[_])> = results.iter().enumerate().map(|(i, d)| (i, d.as_slice())).collect();
    let path = out.join("detections.csv");
    write_detections(create(&path)?, &prov, &refs)?;
    Ok(vec![path])
}

pub enum CalibrationInput<'a> {
    Dataset(&'a Path),
    /// Detections of three-image shots with the given middle-image shifts.
    Protocol {
        detections: &'a Path,
        shifts: &'a str,
    },
    Synthetic {
        seed: u64,
    },
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    provenance: BTreeMap<String, String>,
    rayleigh_length_nm: f64,
    rayleigh_length_dz: f64,
    alpha_deg: f64,
    rate: f64,
    mse_deg2: f64,
    sigma_rayleigh_length_dz: f64,
    sigma_alpha_deg: f64,
    records: usize,
    rejected_by_post_selection: usize,
    iterations: usize,
}

/// Angle pairs from three-image shots: the first and third image share the
/// focal plane and must agree within the post-selection tolerance.
fn protocol_pairs(
    cfg: &RunConfig,
    records: &[DetectionRecord],
    shifts: &[f64],
) -> Result<(AnglePairDataset, usize), CliError> {
    let radius = cfg.length(cfg.calibration.match_radius)?;
    let tol = cfg.angle(cfg.calibration.post_select)?;
    let frames = records.iter().map(|r| r.frame_id + 1).max().unwrap_or(0);
    let in_frame = |f: usize| records.iter().filter(move |r| r.frame_id == f);
    let nearest = |f: usize, r: &DetectionRecord| {
        in_frame(f)
            .map(|o| (o, (o.x - r.x).hypot(o.y - r.y)))
            .filter(|(_, d)| *d <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(o, _)| o)
    };
    let (mut pairs, mut rejected) = (Vec::new(), 0);
    for shot in 0..frames.div_ceil(3) {
        let delta_z = shifts[shot % shifts.len()];
        for first in in_frame(3 * shot) {
            let (Some(middle), Some(last)) = (nearest(3 * shot + 1, first), nearest(3 * shot + 2, first)) else {
                continue;
            };
            if !post_select(first.theta, last.theta, tol) {
                rejected += 1;
                continue;
            }
            let theta = first.theta + 0.5 * orientation_difference(last.theta, first.theta);
            pairs.push(AnglePair { theta, theta_shifted: middle.theta, delta_z });
        }
    }
    Ok((AnglePairDataset { records: pairs }, rejected))
}

/// Joint `(zR, α)` fit with `V` fixed to `calibration.rate`.
pub fn calibrate(cfg: &RunConfig, input: CalibrationInput, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dz = cfg.plane_spacing()?;
    let mut written = Vec::new();
    let (data, rejected, seed) = match input {
        CalibrationInput::Dataset(path) => (read_dataset(open(path)?, dz)?, 0, None),
        CalibrationInput::Protocol { detections, shifts } => {
            let shifts: Vec<f64> = parse_list(shifts)?.into_iter().map(|q| cfg.length(q)).collect::<Result<_, _>>()?;
            let records = read_detections(open(detections)?)?;
            let (data, rejected) = protocol_pairs(cfg, &records, &shifts)?;
            let path = out.join("pairs.csv");
            write_dataset(create(&path)?, &provenance(cfg, "calibrate", None), &data, dz)?;
            written.push(path);
            (data, rejected, None)
        }
        CalibrationInput::Synthetic { seed } => {
            let c = &cfg.calibration;
            let shifts: Vec<f64> = c.shifts.iter().map(|q| cfg.length(*q)).collect::<Result<_, _>>()?;
            let max_plane = (cfg.lattice.extent[2] as i64 - 1) / 2;
            let data = synthetic_dataset(
                &cfg.explicit_law()?,
                &shifts,
                c.pairs_per_group,
                dz,
                max_plane,
                cfg.angle(c.angle_noise)?,
                seed,
            )
            .map_err(numeric)?;
            (data, 0, Some(seed))
        }
    };
    let fit: CalibrationResult = fit_calibration(&data, cfg.calibration.rate).map_err(numeric)?;
    let prov = provenance(cfg, "calibrate", seed);
    let report = CalibrationReport {
        provenance: prov.entries.into_iter().collect(),
        rayleigh_length_nm: round(fit.zr * 1e9, 1e3),
        rayleigh_length_dz: round(fit.zr / dz, 1e6),
        alpha_deg: round(fit.alpha.to_degrees(), 1e6),
        rate: fit.v,
        mse_deg2: round(fit.mse_deg2, 1e6),
        sigma_rayleigh_length_dz: round(fit.sigma_zr / dz, 1e6),
        sigma_alpha_deg: round(fit.sigma_alpha.to_degrees(), 1e6),
        records: fit.records,
        rejected_by_post_selection: rejected,
        iterations: fit.iterations,
    };
    let path = out.join("calibration.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
    written.push(path);
    Ok(written)
}

fn round(v: f64, scale: f64) -> f64 {
    (v * scale).round() / scale
}

/// Fisher information curves of the configured superposition and of the
/// fundamental mode over `±z_max·zR`.
pub fn fisher(cfg: &RunConfig, z_max: f64, points: usize, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !(z_max > 0.0 && z_max <= 2.0) || points < 2 {
        return Err(CliError::Config(format!("need 0 < z_max ≤ 2 and at least two points (got {z_max}, {points})")));
    }
    let train = cfg.optical_train()?;
    let geom = BeamGeometry::new(train.object_waist(cfg.mask.a_over_w0), train.wavelength).map_err(numeric)?;
    let zr = geom.rayleigh_length();
    let z: Vec<f64> = (0..points).map(|k| (-z_max + 2.0 * z_max * k as f64 / (points - 1) as f64) * zr).collect();
    let prov = provenance(cfg, "fisher", None).with("waist_nm", format!("{:.3}", geom.waist() * 1e9));
    let mut written = Vec::new();
    for (name, sup) in
        [("fisher.csv", cfg.superposition()?), ("fisher_fundamental.csv", LgSuperposition::fundamental())]
    {
        let curve = fisher_curve(&sup, &geom, &z).map_err(numeric)?;
        let path = out.join(name);
        write_fisher(create(&path)?, &prov, &curve, zr)?;
        written.push(path);
    }
    Ok(written)
}

pub struct ScanArgs<'a> {
    pub nolls: &'a [u32],
    pub coefficients: &'a [f64],
    pub z_max_dz: u32,
}

/// Rotation curves under single Zernike aberrations.
pub fn aberration_scan(cfg: &RunConfig, args: &ScanArgs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    cfg.require_double_helix()?;
    let train = cfg.optical_train()?;
    let settings = ScanSettings {
        train: train.clone(),
        grid: cfg.grid()?,
        a_over_w0: cfg.mask.a_over_w0,
        stack: cfg.stack_options(),
        plane_spacing: cfg.plane_spacing()?,
    };
    let scan = zernike_scan(&settings, train.na, args.nolls, args.coefficients, args.z_max_dz).map_err(numeric)?;
    let curves: Vec<_> = std::iter::once(&scan.unaberrated).chain(&scan.curves).collect();
    let path = out.join("scan.csv");
    write_scan(create(&path)?, &provenance(cfg, "aberration-scan", None), &curves, settings.plane_spacing)?;
    Ok(vec![path])
}

/// Default aberration list: every Noll index the scan supports.
pub fn default_nolls() -> Vec<u32> {
    (4..=13).collect()
}

/// Parse `"0.5dz"`-style overrides for command-line flags.
pub fn quantity(s: &str) -> Result<Quantity, CliError> {
    s.parse().map_err(CliError::Config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_mixed_deterministically() {
        assert_eq!(mix(1, 2), mix(1, 2));
        assert_ne!(mix(1, 2), mix(1, 3));
        assert_ne!(mix(1, 2), mix(2, 2));
    }

    #[test]
    fn nm_lists_round_trip() {
        let z = [-1.064e-6, 0.0, 5.32e-8];
        let back = parse_nm_list(&nm_list(&z)).unwrap();
        for (a, b) in z.iter().zip(back) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    fn record(frame_id: usize, x: f64, theta_deg: f64) -> DetectionRecord {
        DetectionRecord { frame_id, x, y: 0.0, theta: theta_deg.to_radians(), z: None }
    }

    #[test]
    fn protocol_pairs_match_and_post_select() {
        let cfg = RunConfig::default();
        let records = vec![
            record(0, 0.0, 10.0),
            record(0, 5e-6, 30.0),
            record(1, 50e-9, -5.0),
            record(1, 5e-6, 12.0),
            record(2, -40e-9, 11.0),
            // hopped between images: third angle disagrees
            record(2, 5.05e-6, 45.0),
        ];
        let (data, rejected) = protocol_pairs(&cfg, &records, &[2.0 * 532e-9]).unwrap();
        assert_eq!(rejected, 1);
        assert_eq!(data.records.len(), 1);
        let pair = data.records[0];
        assert!((pair.theta.to_degrees() - 10.5).abs() < 1e-9);
        assert!((pair.theta_shifted.to_degrees() + 5.0).abs() < 1e-9);
        assert!((pair.delta_z - 1.064e-6).abs() < 1e-15);
    }
}
