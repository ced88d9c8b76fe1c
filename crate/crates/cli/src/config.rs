//! Run configuration: TOML sections whose physical quantities are strings
//! with an explicit unit suffix (`"852nm"`, `"10.4um"`, `"2dz"`, `"34deg"`).
//! Bare numbers are accepted only for dimensionless fields and for fields
//! whose name carries the unit (`crop_radius_px`).

use crate::error::CliError;
use dhpsf::lgmodes::{LgIndex, LgSuperposition, RotationLaw};
use dhpsf::localization::{AngleMethod, PipelineConfig};
use dhpsf::optics::{GridSpec, OpticalTrain, StackOptions, ZernikeTerm};
use dhpsf::synth::{LatticeSpec, NoiseModel};
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::fmt;
use std::path::PathBuf;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Nanometre,
    Micrometre,
    Millimetre,
    Metre,
    /// Multiples of the lattice plane spacing.
    PlaneSpacing,
    Degree,
    Radian,
    Pixel,
}

impl Unit {
    const SUFFIXES: [(&'static str, Unit); 9] = [
        ("nm", Unit::Nanometre),
        ("um", Unit::Micrometre),
        ("µm", Unit::Micrometre),
        ("mm", Unit::Millimetre),
        ("dz", Unit::PlaneSpacing),
        ("deg", Unit::Degree),
        ("rad", Unit::Radian),
        ("px", Unit::Pixel),
        ("m", Unit::Metre),
    ];

    fn suffix(self) -> &'static str {
        Self::SUFFIXES.iter().find(|(_, u)| *u == self).map(|(s, _)| *s).expect("every unit has a suffix")
    }
}

/// A number with its unit, written `"<value><suffix>"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub const fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }
}

impl std::str::FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (suffix, unit) = Unit::SUFFIXES
            .iter()
            .find(|(suffix, _)| s.ends_with(suffix))
            .ok_or_else(|| format!("{s:?} has no unit suffix (nm, um, mm, m, dz, deg, rad, px)"))?;
        let number = s[..s.len() - suffix.len()].trim();
        let value: f64 = number.parse().map_err(|_| format!("{s:?}: {number:?} is not a number"))?;
        if !value.is_finite() {
            return Err(format!("{s:?} is not finite"));
        }
        Ok(Self { value, unit: *unit })
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.value, self.unit.suffix())
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a string with a unit suffix such as \"852nm\"")
            }
            fn visit_str<E: de::Error>(self, s: &str) -> Result<Quantity, E> {
                s.parse().map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Quantity, E> {
                Err(E::custom(format!("unitless value {v}; write it with a unit suffix, e.g. \"{v}nm\"")))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Quantity, E> {
                self.visit_f64(v as f64)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub wavelength: Quantity,
    pub na: f64,
    /// Radius of the objective's back aperture on the SLM at `na`.
    pub pupil_radius: Quantity,
    pub objective_focal_length: Quantity,
    pub relay_focal_length: Quantity,
    pub magnification: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            wavelength: Quantity::new(852.0, Unit::Nanometre),
            na: 0.6,
            pupil_radius: Quantity::new(230.0, Unit::Pixel),
            objective_focal_length: Quantity::new(10.0, Unit::Millimetre),
            relay_focal_length: Quantity::new(400.0, Unit::Millimetre),
            magnification: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub size: usize,
    pub pitch: Quantity,
    pub pad_factor: usize,
    /// Simulated PSF window, in simulation pixels.
    pub crop: usize,
    /// Camera pixel as a block of `bin × bin` simulation pixels.
    pub bin: usize,
    /// Camera frame side, in camera pixels.
    pub camera_size: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 1050,
            pitch: Quantity::new(10.4, Unit::Micrometre),
            pad_factor: 10,
            crop: 165,
            bin: 5,
            camera_size: 420,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AberrationEntry {
    pub noll: u32,
    pub waves_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub a_over_w0: f64,
    /// Equal-weight superposition terms as `[l, p]`.
    pub terms: Vec<[i32; 2]>,
    pub lens_shift: Quantity,
    pub aberrations: Vec<AberrationEntry>,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            a_over_w0: dhpsf::optics::DEFAULT_A_OVER_W0,
            terms: vec![[0, 0], [2, 1]],
            lens_shift: Quantity::new(0.0, Unit::PlaneSpacing),
            aberrations: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatticeConfig {
    pub lateral_spacing: Quantity,
    pub plane_spacing: Quantity,
    pub extent: [usize; 3],
    pub mean_atoms: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            lateral_spacing: Quantity::new(612.0, Unit::Nanometre),
            plane_spacing: Quantity::new(532.0, Unit::Nanometre),
            extent: [100, 100, 11],
            mean_atoms: 6.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub photons_per_atom: f64,
    pub background_photons: f64,
    pub read_noise_counts: f64,
    pub excess_factor: f64,
    pub shot_noise: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        let n = NoiseModel::default();
        Self {
            photons_per_atom: n.photons_per_atom,
            background_photons: n.background_mean,
            read_noise_counts: n.read_noise_sigma,
            excess_factor: n.excess_factor,
            shot_noise: n.shot_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineSection {
    pub lowpass_cycles_per_px: f64,
    pub peak_min_distance_px: f64,
    pub pair_gate_px: [f64; 2],
    pub crop_radius_px: usize,
    pub threshold_sigma: f64,
    pub relative_threshold: f64,
    pub lobe_sigma_px: f64,
    pub method: String,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            lowpass_cycles_per_px: p.lowpass_cutoff,
            peak_min_distance_px: p.peak_min_distance,
            pair_gate_px: [p.pair_gate.0, p.pair_gate.1],
            crop_radius_px: p.crop_radius,
            threshold_sigma: p.threshold,
            relative_threshold: p.relative_threshold,
            lobe_sigma_px: p.lobe_sigma,
            method: "double-gaussian".into(),
        }
    }
}

/// Where the rotation law used for depth assignment comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawSource {
    /// Calibrated on the simulated PSF through the localization pipeline.
    Psf,
    /// The `rate`, `rayleigh_length` and `alpha` given here.
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub law: LawSource,
    pub rate: f64,
    pub rayleigh_length: Quantity,
    pub alpha: Quantity,
    /// Half-range of the PSF calibration sweep.
    pub psf_range: Quantity,
    pub post_select: Quantity,
    /// Lateral radius for matching one atom across the protocol images.
    pub match_radius: Quantity,
    pub angle_noise: Quantity,
    pub pairs_per_group: usize,
    pub shifts: Vec<Quantity>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            law: LawSource::Psf,
            rate: 2.0,
            rayleigh_length: Quantity::new(14.39, Unit::PlaneSpacing),
            alpha: Quantity::new(34.0, Unit::Degree),
            psf_range: Quantity::new(5.0, Unit::PlaneSpacing),
            post_select: Quantity::new(2.0, Unit::Degree),
            match_radius: Quantity::new(300.0, Unit::Nanometre),
            angle_noise: Quantity::new(3.0, Unit::Degree),
            pairs_per_group: 500,
            shifts: [-4.0, -2.0, 0.0, 2.0, 4.0].iter().map(|v| Quantity::new(*v, Unit::PlaneSpacing)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub train: TrainConfig,
    pub grid: GridConfig,
    pub mask: MaskConfig,
    pub lattice: LatticeConfig,
    pub noise: NoiseConfig,
    pub pipeline: PipelineSection,
    pub calibration: CalibrationConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            train: TrainConfig::default(),
            grid: GridConfig::default(),
            mask: MaskConfig::default(),
            lattice: LatticeConfig::default(),
            noise: NoiseConfig::default(),
            pipeline: PipelineSection::default(),
            calibration: CalibrationConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file; `schema_version` is mandatory.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        match raw.get("schema_version").and_then(toml::Value::as_integer) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => {
                return Err(CliError::Config(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})")))
            }
            None => return Err(CliError::Config("missing integer schema_version".into())),
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization (after command-line overrides).
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.plane_spacing()?;
        self.optical_train()?;
        self.grid()?;
        self.pipeline(1.0)?;
        self.superposition()?;
        self.aberrations()?;
        if self.grid.bin == 0
            || !self.grid.crop.is_multiple_of(self.grid.bin)
            || (self.grid.crop / self.grid.bin).is_multiple_of(2)
        {
            return Err(CliError::Config(format!(
                "grid.crop ({}) must be an odd multiple of grid.bin ({})",
                self.grid.crop, self.grid.bin
            )));
        }
        Ok(())
    }

    pub fn plane_spacing(&self) -> Result<f64, CliError> {
        let q = self.lattice.plane_spacing;
        if q.unit == Unit::PlaneSpacing {
            return Err(CliError::Config("lattice.plane_spacing cannot be given in dz".into()));
        }
        positive(self.length(q)?, "lattice.plane_spacing")
    }

    /// Convert a length quantity to metres.
    pub fn length(&self, q: Quantity) -> Result<f64, CliError> {
        Ok(match q.unit {
            Unit::Nanometre => q.value * 1e-9,
            Unit::Micrometre => q.value * 1e-6,
            Unit::Millimetre => q.value * 1e-3,
            Unit::Metre => q.value,
            Unit::PlaneSpacing => q.value * self.plane_spacing()?,
            other => return Err(CliError::Config(format!("{q} is not a length ({} given)", other.suffix()))),
        })
    }

    pub fn angle(&self, q: Quantity) -> Result<f64, CliError> {
        match q.unit {
            Unit::Degree => Ok(q.value * PI / 180.0),
            Unit::Radian => Ok(q.value),
            _ => Err(CliError::Config(format!("{q} is not an angle"))),
        }
    }

    fn pixels(&self, q: Quantity) -> Result<f64, CliError> {
        match q.unit {
            Unit::Pixel => Ok(q.value),
            _ => Err(CliError::Config(format!("{q} is not a pixel count"))),
        }
    }

    pub fn optical_train(&self) -> Result<OpticalTrain, CliError> {
        let t = &self.train;
        let slm_pitch = positive(self.length(self.grid.pitch)?, "grid.pitch")?;
        let f_obj = positive(self.length(t.objective_focal_length)?, "train.objective_focal_length")?;
        let f1 = positive(self.length(t.relay_focal_length)?, "train.relay_focal_length")?;
        let a = positive(self.pixels(t.pupil_radius)?, "train.pupil_radius")?;
        let m = positive(t.magnification, "train.magnification")?;
        let na = positive(t.na, "train.na")?;
        // a = NA·f_obj·f2/(f1·p) fixes f2; M = (f1/f_obj)·(f_tube/f2) fixes f_tube
        let f2 = a * slm_pitch * f1 / (na * f_obj);
        let train = OpticalTrain {
            wavelength: positive(self.length(t.wavelength)?, "train.wavelength")?,
            na,
            slm_pitch,
            f_obj,
            f1,
            f2,
            f3: f2,
            f_tube: m * f2 * f_obj / f1,
        };
        train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(train)
    }

    pub fn grid(&self) -> Result<GridSpec, CliError> {
        GridSpec::new(self.grid.size, self.length(self.grid.pitch)?).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn stack_options(&self) -> StackOptions {
        StackOptions { pad_factor: self.grid.pad_factor, crop: self.grid.crop }
    }

    pub fn superposition(&self) -> Result<LgSuperposition, CliError> {
        let modes: Vec<LgIndex> = self
            .mask
            .terms
            .iter()
            .map(|[l, p]| {
                u32::try_from(*p)
                    .map(|p| LgIndex::new(*l, p))
                    .map_err(|_| CliError::Config(format!("radial index {p} must be non-negative")))
            })
            .collect::<Result<_, _>>()?;
        LgSuperposition::equal_weights(&modes).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The phase-mask generator implements the two-mode double helix only.
    pub fn require_double_helix(&self) -> Result<(), CliError> {
        if self.superposition()? != LgSuperposition::double_helix() {
            return Err(CliError::Config(format!(
                "mask.terms {:?}: only the double-helix terms [[0, 0], [2, 1]] can be written as a phase mask",
                self.mask.terms
            )));
        }
        Ok(())
    }

    pub fn aberrations(&self) -> Result<Vec<ZernikeTerm>, CliError> {
        self.mask
            .aberrations
            .iter()
            .map(|a| ZernikeTerm::new(a.noll, a.waves_rms).map_err(|e| CliError::Config(e.to_string())))
            .collect()
    }

    pub fn lattice(&self) -> Result<LatticeSpec, CliError> {
        let [nx, ny, nz] = self.lattice.extent;
        let spec = LatticeSpec {
            lateral_spacing: positive(self.length(self.lattice.lateral_spacing)?, "lattice.lateral_spacing")?,
            plane_spacing: self.plane_spacing()?,
            extent: (nx, ny, nz),
        };
        spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(spec)
    }

    pub fn noise(&self, seed: u64) -> NoiseModel {
        let n = &self.noise;
        NoiseModel {
            photons_per_atom: n.photons_per_atom,
            background_mean: n.background_photons,
            read_noise_sigma: n.read_noise_counts,
            excess_factor: n.excess_factor,
            shot_noise: n.shot_noise,
            seed,
        }
    }

    pub fn pipeline(&self, pixel_size: f64) -> Result<PipelineConfig, CliError> {
        let p = &self.pipeline;
        let method = match p.method.as_str() {
            "double-gaussian" => AngleMethod::DoubleGaussian,
            "radon" => AngleMethod::Radon,
            other => return Err(CliError::Config(format!("unknown pipeline.method {other:?}"))),
        };
        let cfg = PipelineConfig {
            lowpass_cutoff: p.lowpass_cycles_per_px,
            peak_min_distance: p.peak_min_distance_px,
            pair_gate: (p.pair_gate_px[0], p.pair_gate_px[1]),
            crop_radius: p.crop_radius_px,
            threshold: p.threshold_sigma,
            relative_threshold: p.relative_threshold,
            lobe_sigma: p.lobe_sigma_px,
            method,
            pixel_size,
            ..PipelineConfig::default()
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn explicit_law(&self) -> Result<RotationLaw, CliError> {
        let c = &self.calibration;
        RotationLaw::new(c.rate, self.length(c.rayleigh_length)?, self.angle(c.alpha)?)
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

fn positive(v: f64, name: &str) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be positive, got {v}")))
    }
}

/// `"lo:hi:step"` with unit suffixes, e.g. `"-5dz:5dz:0.1dz"`.
pub fn parse_range(cfg: &RunConfig, s: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(CliError::Config(format!("range {s:?} must have the form lo:hi:step")));
    };
    let q = |t: &str| t.parse::<Quantity>().map_err(CliError::Config).and_then(|q| cfg.length(q));
    let (lo, hi, step) = (q(lo)?, q(hi)?, q(step)?);
    if !(step > 0.0 && hi >= lo) {
        return Err(CliError::Config(format!("range {s:?} needs hi ≥ lo and a positive step")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| lo + k as f64 * step).collect())
}

/// Comma-separated quantities, e.g. `"2dz,-2dz"`.
pub fn parse_list(s: &str) -> Result<Vec<Quantity>, CliError> {
    s.split(',').map(|t| t.parse::<Quantity>().map_err(CliError::Config)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantities_parse_with_units() {
        let q: Quantity = "852nm".parse().unwrap();
        assert_eq!(q, Quantity::new(852.0, Unit::Nanometre));
        assert_eq!("-2.5dz".parse::<Quantity>().unwrap().unit, Unit::PlaneSpacing);
        assert_eq!("10.4µm".parse::<Quantity>().unwrap().unit, Unit::Micrometre);
        assert_eq!("1m".parse::<Quantity>().unwrap().unit, Unit::Metre);
        assert!("852".parse::<Quantity>().is_err());
        assert!("nm".parse::<Quantity>().is_err());
        assert_eq!(q.to_string().parse::<Quantity>().unwrap(), q);
    }

    #[test]
    fn default_config_reproduces_default_train() {
        let cfg = RunConfig::default();
        let train = cfg.optical_train().unwrap();
        let reference = OpticalTrain::default();
        assert!((train.f2 - reference.f2).abs() < 1e-12);
        assert!((train.f_tube - reference.f_tube).abs() < 1e-12);
        assert!((train.pupil_radius_px() - 230.0).abs() < 1e-9);
        assert!((train.lateral_magnification() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn toml_round_trip_and_schema() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        let no_version = text.replace("schema_version = 1\n", "");
        assert!(matches!(RunConfig::from_toml(&no_version), Err(CliError::Config(_))));
        let wrong = text.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(RunConfig::from_toml(&wrong), Err(CliError::Config(_))));
    }

    #[test]
    fn unitless_lengths_are_rejected() {
        let text = "schema_version = 1\n[train]\nwavelength = 852\n";
        let err = RunConfig::from_toml(text).unwrap_err();
        assert!(err.to_string().contains("unit"), "{err}");
        let angle_as_length = "schema_version = 1\n[train]\nwavelength = \"30deg\"\n";
        assert!(RunConfig::from_toml(angle_as_length).is_err());
        let dz_spacing = "schema_version = 1\n[lattice]\nplane_spacing = \"1dz\"\n";
        assert!(RunConfig::from_toml(dz_spacing).is_err());
    }

    #[test]
    fn plane_units_resolve_against_the_lattice() {
        let cfg = RunConfig::default();
        assert!((cfg.length("2dz".parse().unwrap()).unwrap() - 1.064e-6).abs() < 1e-18);
        let z = parse_range(&cfg, "-1dz:1dz:0.5dz").unwrap();
        assert_eq!(z.len(), 5);
        assert!((z[4] - 532e-9).abs() < 1e-18);
        assert!(parse_range(&cfg, "1dz:0dz:0.5dz").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.na = 0.5;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
