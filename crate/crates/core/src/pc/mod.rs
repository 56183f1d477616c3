//! Phase congruency: the 1-D closed form and profile, the 2-D log-Gabor
//! construction, moment maps, and keypoint detection by non-maximum
//! suppression.

mod bank;
mod keypoints;
mod maps;
mod point;
mod profile;

pub use bank::{BankParams, LogGaborBank};
pub use keypoints::{
    detect_keypoints, read_keypoints, write_keypoints, DetectParams, KeypointKind, Keypoint,
    KindSelection, Threshold,
};
pub use maps::{compute_pc_maps, PcMaps};
pub use point::{eval_pc_point, synth_signal, FourierComponentSet, SyntheticSignalSpec};
pub use profile::{pc_profile_1d, MIN_PROFILE_LEN};

use thiserror::Error;

/// Absolute guard added to every amplitude normalization.
pub const PC_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum PcError {
    #[error("signal has {len} samples, need at least {min}")]
    SignalTooShort { len: usize, min: usize },
    #[error("invalid filter bank parameters: {0}")]
    InvalidBankParams(String),
    #[error("image is {image:?} but the filter bank was built for {bank:?}")]
    DimensionMismatch {
        image: (usize, usize),
        bank: (usize, usize),
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("keypoint file: {0}")]
    KeypointFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
