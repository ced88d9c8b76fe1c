//! Double-helix point-spread-function toolkit: Laguerre-Gaussian mode
//! algebra, Fourier-optics simulation of a phase-mask imaging train,
//! synthetic camera frames, 3D localization, angle-to-depth calibration,
//! Fisher information and aberration studies.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aberration;
pub mod angle;
pub mod calibration;
pub mod fisher;
pub mod fit;
pub mod io;
pub mod lgmodes;
pub mod localization;
pub mod optics;
pub mod synth;

use thiserror::Error;

/// Union of the module errors, for callers that drive several stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Lg(#[from] lgmodes::LgError),
    #[error(transparent)]
    Optics(#[from] optics::OpticsError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Localization(#[from] localization::LocalizationError),
    #[error(transparent)]
    Calibration(#[from] calibration::CalibrationError),
    #[error(transparent)]
    Fisher(#[from] fisher::FisherError),
    #[error(transparent)]
    Aberration(#[from] aberration::AberrationError),
    #[error(transparent)]
    Fit(#[from] fit::FitError),
    #[error(transparent)]
    Io(#[from] io::IoError),
}
