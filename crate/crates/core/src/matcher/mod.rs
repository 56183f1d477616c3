//! Keypoint matching: score candidate pairs, keep mutual-best matches above
//! a threshold, and verify them with a seeded random-sample consensus.

mod consensus;
mod io;
mod pipeline;
mod score;
mod select;

pub use consensus::{consensus_filter, fit_least_squares, fit_minimal};
pub use io::{read_matches, write_matches, MatchFile, MatchLine};
pub use pipeline::{match_pipeline, run_pipeline, PipelineRun, StageTimings};
pub use score::{score_candidates, NccScorer, NetScorer, PatchScorer};
pub use select::select_matches;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convnet::ConvNetError;
use crate::geometry::Similarity;
use crate::imaging::ImageError;
use crate::pc::{DetectParams, PcError};

#[derive(Debug, Error)]
pub enum MatcherError {
    #[error("model expects {model}px patches, matcher is configured for {config}px")]
    ModelShapeMismatch { model: usize, config: usize },
    #[error("{got} matches, the {model:?} model needs at least {needed}")]
    InsufficientMatches {
        model: GeometricModel,
        needed: usize,
        got: usize,
    },
    #[error("best consensus has {best} inliers, need {needed}")]
    NoConsensus { best: usize, needed: usize },
    #[error("no keypoints detected in image {0}")]
    NoKeypoints(char),
    #[error("invalid matcher config: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Pc(#[from] PcError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Model(#[from] ConvNetError),
    #[error("match file: {0}")]
    MatchFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometricModel {
    Translation,
    Similarity,
}

impl GeometricModel {
    pub fn min_samples(self) -> usize {
        match self {
            GeometricModel::Translation => 1,
            GeometricModel::Similarity => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub patch_size: usize,
    /// Candidates must score strictly above this.
    pub score_threshold: f64,
    pub mutual_best: bool,
    /// Chebyshev gate between a B keypoint and the coarse-aligned A
    /// keypoint; `None` scores every pair.
    pub search_radius: Option<f64>,
    /// Prior A-to-B alignment used for gating; identity when absent.
    pub coarse_alignment: Option<Similarity>,
    pub model: GeometricModel,
    pub iterations: usize,
    pub tolerance: f64,
    pub min_inliers: usize,
    pub seed: u64,
    pub detect: DetectParams,
    pub noise_compensation: bool,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            score_threshold: 0.0,
            mutual_best: true,
            search_radius: None,
            coarse_alignment: None,
            model: GeometricModel::Translation,
            iterations: 500,
            tolerance: 2.0,
            min_inliers: 4,
            seed: 0,
            detect: DetectParams::default(),
            noise_compensation: true,
        }
    }
}

impl MatcherConfig {
    pub fn validate(&self) -> Result<(), MatcherError> {
        let bad = |m: String| Err(MatcherError::InvalidConfig(m));
        if !matches!(self.patch_size, 16 | 32 | 64) {
            return bad(format!("patch size {} not in {{16, 32, 64}}", self.patch_size));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return bad(format!("tolerance {} must be positive", self.tolerance));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.score_threshold.is_nan() {
            return bad("score threshold is NaN".into());
        }
        if let Some(r) = self.search_radius {
            if r.is_nan() || r < 0.0 {
                return bad(format!("search radius {r} must be non-negative"));
            }
        }
        if let Some(t) = &self.coarse_alignment {
            if !t.is_invertible() {
                return bad("coarse alignment is degenerate".into());
            }
        }
        Ok(())
    }
}

/// A scored (A keypoint, B keypoint) pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchCandidate {
    pub a: usize,
    pub b: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub score: f64,
    pub inlier: bool,
    /// Distance between the transformed A point and the B point.
    pub residual: f64,
}

/// How many items each stage consumed and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub keypoints_a: usize,
    pub keypoints_b: usize,
    /// Keypoints too close to an edge for a full patch.
    pub border_skipped_a: usize,
    pub border_skipped_b: usize,
    pub candidates: usize,
    pub below_threshold: usize,
    /// Above threshold but not a mutual best.
    pub not_selected: usize,
    pub accepted: usize,
    pub outliers: usize,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Accepted matches in ascending A index; inliers are flagged.
    pub matches: Vec<Match>,
    pub transform: Similarity,
    pub inlier_count: usize,
    pub mean_residual: f64,
    pub max_residual: f64,
    pub counts: StageCounts,
}

impl MatchResult {
    pub fn inliers(&self) -> impl Iterator<Item = &Match> {
        self.matches.iter().filter(|m| m.inlier)
    }
}
