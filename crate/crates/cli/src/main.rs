mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::{CalibrationInput, ScanArgs, SynthArgs};
use config::RunConfig;
use error::CliError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dhpsf", version, about = "Double-helix PSF simulation, localization and calibration")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Write the SLM phase pattern.
    Mask {
        #[arg(long)]
        na: Option<f64>,
        /// Focal shift from the holographic lens, e.g. `2dz`.
        #[arg(long)]
        lens_shift: Option<String>,
    },
    /// Simulate a PSF stack.
    Simulate {
        /// Depth range `lo:hi:step`, e.g. `-5dz:5dz:0.5dz`.
        #[arg(long, default_value = "-5dz:5dz:0.5dz")]
        z: String,
    },
    /// Synthesize camera frames of random lattice fillings.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        shots: usize,
        /// Middle-image focal shifts for the three-image protocol, e.g. `2dz,-2dz`.
        #[arg(long)]
        shifts: Option<String>,
        /// Stored PSF stack (`simulate` output); simulated on the fly otherwise.
        #[arg(long)]
        psf: Option<PathBuf>,
    },
    /// Localize double-helix images in a frame stack.
    Localize {
        #[arg(long)]
        frames: PathBuf,
    },
    /// Fit the rotation law to angle pairs.
    Calibrate {
        /// Angle-pair CSV.
        #[arg(long, conflicts_with_all = ["detections", "synthetic"])]
        dataset: Option<PathBuf>,
        /// Detections of three-image shots; needs `--shifts`.
        #[arg(long, requires = "shifts", conflicts_with = "synthetic")]
        detections: Option<PathBuf>,
        #[arg(long)]
        shifts: Option<String>,
        /// Draw a dataset from the explicit law in the config.
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fisher information of the superposition and of the fundamental mode.
    Fisher {
        /// Half range in Rayleigh lengths.
        #[arg(long, default_value_t = 2.0)]
        z_max: f64,
        #[arg(long, default_value_t = 81)]
        points: usize,
    },
    /// Rotation curves under single Zernike aberrations.
    AberrationScan {
        #[arg(long)]
        na: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        noll: Vec<u32>,
        /// Coefficients in waves RMS.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        coefficients: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        z_max_dz: u32,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    if let Command::Config = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(Vec::new());
    }
    let out = cli.out.unwrap_or_else(|| cfg.output.dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    match cli.command {
        Command::Config => unreachable!(),
        Command::Mask { na, lens_shift } => {
            if let Some(na) = na {
                cfg.train.na = na;
            }
            if let Some(s) = lens_shift {
                cfg.mask.lens_shift = commands::quantity(&s)?;
            }
            cfg.validate()?;
            commands::mask(&cfg, &out)
        }
        Command::Simulate { z } => commands::simulate(&cfg, &z, &out),
        Command::Synth { seed, shots, shifts, psf } => {
            commands::synth(&cfg, &SynthArgs { seed, shots, shifts: shifts.as_deref(), psf: psf.as_deref() }, &out)
        }
        Command::Localize { frames } => commands::localize(&cfg, &frames, &out),
        Command::Calibrate { dataset, detections, shifts, synthetic, seed } => {
            let shifts = shifts.unwrap_or_default();
            let input = match (&dataset, &detections, synthetic) {
                (Some(p), _, _) => CalibrationInput::Dataset(p),
                (None, Some(p), _) => CalibrationInput::Protocol { detections: p, shifts: &shifts },
                (None, None, true) => CalibrationInput::Synthetic { seed },
                (None, None, false) => {
                    return Err(CliError::Config("calibrate needs --dataset, --detections or --synthetic".into()))
                }
            };
            commands::calibrate(&cfg, input, &out)
        }
        Command::Fisher { z_max, points } => commands::fisher(&cfg, z_max, points, &out),
        Command::AberrationScan { na, noll, coefficients, z_max_dz } => {
            if let Some(na) = na {
                cfg.train.na = na;
            }
            cfg.validate()?;
            let nolls = if noll.is_empty() { commands::default_nolls() } else { noll };
            let coefficients =
                if coefficients.is_empty() { dhpsf::aberration::DEFAULT_COEFFICIENTS.to_vec() } else { coefficients };
            commands::aberration_scan(&cfg, &ScanArgs { nolls: &nolls, coefficients: &coefficients, z_max_dz }, &out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.record()).expect("error record serializes"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
