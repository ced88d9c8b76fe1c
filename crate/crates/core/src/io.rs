//! File formats: float32 image stacks, 16-bit phase-mask PNGs, key-value
//! sidecars and CSV tables with `#` provenance headers.
//!
//! Stack layout (little endian): magic `DHF3`, `u32` rows, `u32` cols,
//! `u32` frame count, `f64` pixel pitch (m), then `rows·cols·frames`
//! `f32` values, row-major, frame after frame.

use crate::aberration::RotationCurve;
use crate::calibration::{AnglePair, AnglePairDataset};
use crate::fisher::FisherCurve;
use crate::localization::Detection;
use crate::optics::wrap_phase;
use crate::synth::AtomSet;
use ndarray::Array2;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("malformed file: {0}")]
    Format(String),
}

pub const STACK_MAGIC: &[u8; 4] = b"DHF3";

/// Provenance written as `# key: value` lines ahead of every table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(tool_version: &str, config_hash: &str, seed: Option<u64>) -> Self {
        let mut entries = vec![
            ("tool_version".to_string(), tool_version.to_string()),
            ("config_hash".to_string(), config_hash.to_string()),
        ];
        if let Some(s) = seed {
            entries.push(("seed".to_string(), s.to_string()));
        }
        Self { entries }
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }

    fn write_header<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (k, v) in &self.entries {
            writeln!(out, "# {k}: {v}")?;
        }
        Ok(())
    }
}

/// Write equally sized frames as a float32 stack.
pub fn write_stack<W: Write>(out: W, frames: &[Array2<f64>], pitch: f64) -> Result<(), IoError> {
    let (rows, cols) = frames.first().map_or((0, 0), |f| f.dim());
    if frames.iter().any(|f| f.dim() != (rows, cols)) {
        return Err(IoError::Format("frames of a stack must share one shape".into()));
    }
    let mut out = BufWriter::new(out);
    out.write_all(STACK_MAGIC)?;
    for v in [rows, cols, frames.len()] {
        let v = u32::try_from(v).map_err(|_| IoError::Format(format!("dimension {v} exceeds u32")))?;
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&pitch.to_le_bytes())?;
    for f in frames {
        for &v in f.iter() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Read a float32 stack; returns the frames and the pixel pitch.
pub fn read_stack<R: Read>(input: R) -> Result<(Vec<Array2<f64>>, f64), IoError> {
    let mut input = BufReader::new(input);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != STACK_MAGIC {
        return Err(IoError::Format(format!("bad magic {magic:?}")));
    }
    let mut u = [0u8; 4];
    let mut dims = [0usize; 3];
    for d in &mut dims {
        input.read_exact(&mut u)?;
        *d = u32::from_le_bytes(u) as usize;
    }
    let mut p = [0u8; 8];
    input.read_exact(&mut p)?;
    let pitch = f64::from_le_bytes(p);
    let [rows, cols, n] = dims;
    let mut frames = Vec::with_capacity(n);
    let mut buf = vec![0u8; rows * cols * 4];
    for _ in 0..n {
        input.read_exact(&mut buf)?;
        let values = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        frames.push(Array2::from_shape_vec((rows, cols), values).expect("buffer sized to the frame"));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(IoError::Format("trailing bytes after the last frame".into()));
    }
    Ok((frames, pitch))
}

pub fn write_stack_file(path: &Path, frames: &[Array2<f64>], pitch: f64) -> Result<(), IoError> {
    write_stack(File::create(path)?, frames, pitch)
}

pub fn read_stack_file(path: &Path) -> Result<(Vec<Array2<f64>>, f64), IoError> {
    read_stack(File::open(path)?)
}

/// Phase in radians to 16-bit gray, `[0, 2π) → [0, 65535]`.
pub fn phase_to_gray16(phase: f64) -> u16 {
    (wrap_phase(phase) / (2.0 * PI) * 65535.0).round().min(65535.0) as u16
}

pub fn write_phase_png(path: &Path, mask: &Array2<f64>) -> Result<(), IoError> {
    let (rows, cols) = mask.dim();
    let img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_fn(cols as u32, rows as u32, |x, y| {
        image::Luma([phase_to_gray16(mask[[y as usize, x as usize]])])
    });
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Grayscale PNG or TIFF frame as raw counts (8- or 16-bit).
pub fn read_gray_frame(path: &Path) -> Result<Array2<f64>, IoError> {
    let dynamic = image::open(path)?;
    // into_luma16 widens 8-bit data by 257; undo that to keep raw counts
    let scale = match dynamic.color() {
        image::ColorType::L8 | image::ColorType::Rgb8 | image::ColorType::Rgba8 | image::ColorType::La8 => 257.0,
        _ => 1.0,
    };
    let img = dynamic.into_luma16();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| img.get_pixel(c as u32, r as u32)[0] as f64 / scale))
}

/// Human-readable `key = value` sidecar.
pub fn write_meta(path: &Path, entries: &[(String, String)]) -> Result<(), IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in entries {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(IoError::Format(format!("entry {k:?} cannot be stored as key = value")));
        }
        writeln!(out, "{k} = {v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>, IoError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| IoError::Format(format!("line without '=': {l}")))
        })
        .collect()
}

fn table<W: Write>(mut out: W, prov: &Provenance, header: &[&str]) -> Result<csv::Writer<W>, IoError> {
    prov.write_header(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input)
}

fn parse(field: Option<&str>, what: &str) -> Result<f64, IoError> {
    field
        .ok_or_else(|| IoError::Format(format!("missing column {what}")))?
        .trim()
        .parse()
        .map_err(|_| IoError::Format(format!("unparseable {what}")))
}

/// Detections as `frame_id, x_nm, y_nm, theta_deg, z_nm, residual, flags`;
/// `z_nm` is empty when no depth was assigned.
pub fn write_detections<W: Write>(out: W, prov: &Provenance, frames: &[(usize, &[Detection])]) -> Result<(), IoError> {
    let mut w = table(out, prov, &["frame_id", "x_nm", "y_nm", "theta_deg", "z_nm", "residual", "flags"])?;
    for (id, dets) in frames {
        for d in dets.iter() {
            w.write_record([
                id.to_string(),
                format!("{:.3}", d.x * 1e9),
                format!("{:.3}", d.y * 1e9),
                format!("{:.4}", d.theta.to_degrees()),
                d.z.map_or(String::new(), |z| format!("{:.3}", z * 1e9)),
                format!("{:.6e}", d.fit_residual),
                d.flag_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// One row of a detections table.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub frame_id: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub z: Option<f64>,
}

pub fn read_detections<R: Read>(input: R) -> Result<Vec<DetectionRecord>, IoError> {
    let mut out = Vec::new();
    for rec in reader(input).records() {
        let rec = rec?;
        let z = match rec.get(4).map(str::trim) {
            Some("") | None => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| IoError::Format("unparseable z_nm".into()))? * 1e-9),
        };
        out.push(DetectionRecord {
            frame_id: parse(rec.get(0), "frame_id")? as usize,
            x: parse(rec.get(1), "x_nm")? * 1e-9,
            y: parse(rec.get(2), "y_nm")? * 1e-9,
            theta: parse(rec.get(3), "theta_deg")?.to_radians(),
            z,
        });
    }
    Ok(out)
}

/// Ground truth as `x_nm, y_nm, z_nm, i, j, k` (site indices empty for
/// off-lattice atoms).
pub fn write_atoms<W: Write>(out: W, prov: &Provenance, frames: &[(usize, &AtomSet)]) -> Result<(), IoError> {
    let mut w = table(out, prov, &["frame_id", "x_nm", "y_nm", "z_nm", "i", "j", "k"])?;
    for (id, atoms) in frames {
        for a in &atoms.atoms {
            let site = |n: usize| a.site.map_or(String::new(), |s| s[n].to_string());
            w.write_record([
                id.to_string(),
                format!("{:.3}", a.x * 1e9),
                format!("{:.3}", a.y * 1e9),
                format!("{:.3}", a.z * 1e9),
                site(0),
                site(1),
                site(2),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Fisher curves as `z_over_zR, I_x, I_y, I_z`.
pub fn write_fisher<W: Write>(
    out: W,
    prov: &Provenance,
    curve: &FisherCurve,
    rayleigh_length: f64,
) -> Result<(), IoError> {
    let mut w = table(out, prov, &["z_over_zR", "I_x", "I_y", "I_z"])?;
    for i in 0..curve.z_grid.len() {
        w.write_record([
            format!("{:.6}", curve.z_grid[i] / rayleigh_length),
            format!("{:.9e}", curve.i_x[i]),
            format!("{:.9e}", curve.i_y[i]),
            format!("{:.9e}", curve.i_z[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Rotation curves in long format: `noll, W, z_over_dz, theta_deg, flags`.
/// Unaberrated curves carry Noll index 0.
pub fn write_scan<W: Write>(
    out: W,
    prov: &Provenance,
    curves: &[&RotationCurve],
    plane_spacing: f64,
) -> Result<(), IoError> {
    let mut w = table(out, prov, &["noll", "W", "na", "z_over_dz", "theta_deg", "flags"])?;
    for c in curves {
        let (noll, waves) = c.aberration.map_or((0, 0.0), |t| (t.noll, t.waves));
        for i in 0..c.len() {
            let mut flags = Vec::new();
            if c.degenerate[i] {
                flags.push("radon_degenerate");
            }
            if c.degraded[i] {
                flags.push("degraded");
            }
            w.write_record([
                noll.to_string(),
                format!("{waves}"),
                format!("{}", c.na),
                format!("{:.4}", c.z[i] / plane_spacing),
                format!("{:.4}", c.theta[i].to_degrees()),
                flags.join("|"),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Angle pairs as `group_delta_z_in_dz, theta_deg, theta_shifted_deg`.
pub fn write_dataset<W: Write>(
    out: W,
    prov: &Provenance,
    data: &AnglePairDataset,
    plane_spacing: f64,
) -> Result<(), IoError> {
    let mut w = table(out, prov, &["group_delta_z_in_dz", "theta_deg", "theta_shifted_deg"])?;
    for r in &data.records {
        w.write_record([
            format!("{}", r.delta_z / plane_spacing),
            format!("{:.6}", r.theta.to_degrees()),
            format!("{:.6}", r.theta_shifted.to_degrees()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(input: R, plane_spacing: f64) -> Result<AnglePairDataset, IoError> {
    let mut records = Vec::new();
    for rec in reader(input).records() {
        let rec = rec?;
        records.push(AnglePair {
            delta_z: parse(rec.get(0), "group_delta_z_in_dz")? * plane_spacing,
            theta: parse(rec.get(1), "theta_deg")?.to_radians(),
            theta_shifted: parse(rec.get(2), "theta_shifted_deg")?.to_radians(),
        });
    }
    Ok(AnglePairDataset { records })
}
