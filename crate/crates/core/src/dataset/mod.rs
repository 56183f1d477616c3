//! Labeled patch pairs built from aligned image pairs, plus a synthetic
//! generator of sonar-like pairs with nonlinear intensity differences.

mod augment;
mod manifest;
mod samples;
mod split;
mod synth;

pub use augment::{augment, AugmentOps};
pub use manifest::{blob_path, build_manifest, BuildConfig, Manifest};
pub use samples::{derangement, make_negatives, make_negatives_grouped, slice_positive, SampleRecord};
pub use split::{split, Split, SplitRatios};
pub use synth::{synth_pair, SynthParams, Viewpoint};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Similarity;
use crate::imaging::{GrayImage, ImageError};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no window fits inside both images")]
    NoValidWindows,
    #[error("derangement needs at least 2 records, got {0}")]
    CannotDerange(usize),
    #[error("split ratios must be positive and sum to 1: {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("invalid synthesis parameters: {0}")]
    InvalidSynthParams(String),
    #[error("invalid dataset parameters: {0}")]
    InvalidParams(String),
    #[error("image error: {0}")]
    Image(#[from] ImageError),
    #[error("manifest line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },
    #[error("patch blob does not match manifest: {0}")]
    BlobMismatch(String),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Synthetic { seed: u64 },
    External,
}

/// Two co-registered views of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub img_a: GrayImage,
    pub img_b: GrayImage,
    /// Maps A pixel coordinates to B pixel coordinates.
    pub transform: Similarity,
    pub provenance: Provenance,
}

impl AlignedPair {
    pub fn new(
        img_a: GrayImage,
        img_b: GrayImage,
        transform: Similarity,
        provenance: Provenance,
    ) -> Result<Self, DatasetError> {
        if !transform.is_invertible() {
            return Err(DatasetError::InvalidParams(format!(
                "transform is not invertible: {transform:?}"
            )));
        }
        Ok(Self {
            img_a,
            img_b,
            transform,
            provenance,
        })
    }
}

pub(crate) fn check_patch_size(size: usize) -> Result<(), DatasetError> {
    if matches!(size, 16 | 32 | 64) {
        Ok(())
    } else {
        Err(DatasetError::InvalidParams(format!(
            "patch size must be 16, 32 or 64, got {size}"
        )))
    }
}
