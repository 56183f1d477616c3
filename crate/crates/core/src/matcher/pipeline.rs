use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::score::{keypoint_patches, score_prepared};
use super::{
    consensus_filter, select_matches, MatchCandidate, MatchResult, MatcherConfig, MatcherError,
    PatchScorer, StageCounts,
};
use crate::imaging::GrayImage;
use crate::pc::{compute_pc_maps, detect_keypoints, BankParams, Keypoint, LogGaborBank};

/// Minimum side length accepted by the pipeline.
pub const MIN_IMAGE_SIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub detect_ms: f64,
    pub score_ms: f64,
    pub select_ms: f64,
    pub consensus_ms: f64,
}

/// Everything the pipeline produced, including the selected matches when
/// geometric verification fails.
#[derive(Debug)]
pub struct PipelineRun {
    pub keypoints_a: Vec<Keypoint>,
    pub keypoints_b: Vec<Keypoint>,
    pub selected: Vec<MatchCandidate>,
    pub counts: StageCounts,
    pub timings: StageTimings,
    pub result: Result<MatchResult, MatcherError>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn detect(
    img: &GrayImage,
    bank: &LogGaborBank,
    cfg: &MatcherConfig,
) -> Result<Vec<Keypoint>, MatcherError> {
    let maps = compute_pc_maps(img, bank, cfg.noise_compensation)?;
    Ok(detect_keypoints(&maps, &cfg.detect))
}

/// Detects, scores, selects, and verifies. Failures before selection are
/// returned as errors; a consensus failure is kept in
/// [`PipelineRun::result`] alongside the selected matches.
pub fn run_pipeline(
    img_a: &GrayImage,
    img_b: &GrayImage,
    scorer: &dyn PatchScorer,
    cfg: &MatcherConfig,
    bank: &BankParams,
) -> Result<PipelineRun, MatcherError> {
    cfg.validate()?;
    for (name, img) in [('A', img_a), ('B', img_b)] {
        if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
            return Err(MatcherError::InvalidInput(format!(
                "image {name} is {}x{}, need at least {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE}",
                img.width(),
                img.height()
            )));
        }
    }
    if scorer.patch_size() != cfg.patch_size {
        return Err(MatcherError::ModelShapeMismatch {
            model: scorer.patch_size(),
            config: cfg.patch_size,
        });
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let bank_a = LogGaborBank::build(bank, img_a.width(), img_a.height())?;
    let kps_a = detect(img_a, &bank_a, cfg)?;
    let kps_b = if (img_b.width(), img_b.height()) == (img_a.width(), img_a.height()) {
        detect(img_b, &bank_a, cfg)?
    } else {
        detect(img_b, &LogGaborBank::build(bank, img_b.width(), img_b.height())?, cfg)?
    };
    timings.detect_ms = ms(t);
    if kps_a.is_empty() {
        return Err(MatcherError::NoKeypoints('A'));
    }
    if kps_b.is_empty() {
        return Err(MatcherError::NoKeypoints('B'));
    }

    let t = Instant::now();
    let pa = keypoint_patches(img_a, &kps_a, cfg.patch_size);
    let pb = keypoint_patches(img_b, &kps_b, cfg.patch_size);
    let candidates = score_prepared(&pa, &pb, &kps_a, &kps_b, scorer, cfg);
    timings.score_ms = ms(t);

    let t = Instant::now();
    let selected = select_matches(&candidates, cfg);
    timings.select_ms = ms(t);
    let above = candidates.iter().filter(|c| c.score > cfg.score_threshold).count();
    let mut counts = StageCounts {
        keypoints_a: kps_a.len(),
        keypoints_b: kps_b.len(),
        border_skipped_a: pa.iter().filter(|p| p.is_none()).count(),
        border_skipped_b: pb.iter().filter(|p| p.is_none()).count(),
        candidates: candidates.len(),
        below_threshold: candidates.len() - above,
        not_selected: above - selected.len(),
        accepted: selected.len(),
        outliers: 0,
        inliers: 0,
    };

    let t = Instant::now();
    let result = consensus_filter(&selected, &kps_a, &kps_b, cfg).map(|mut r| {
        counts.inliers = r.inlier_count;
        counts.outliers = r.counts.outliers;
        r.counts = counts;
        r
    });
    timings.consensus_ms = ms(t);
    Ok(PipelineRun {
        keypoints_a: kps_a,
        keypoints_b: kps_b,
        selected,
        counts,
        timings,
        result,
    })
}

/// Runs detection, scoring, selection, and consensus on one image pair.
pub fn match_pipeline(
    img_a: &GrayImage,
    img_b: &GrayImage,
    scorer: &dyn PatchScorer,
    cfg: &MatcherConfig,
    bank: &BankParams,
) -> Result<MatchResult, MatcherError> {
    run_pipeline(img_a, img_b, scorer, cfg, bank)?.result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcher::NccScorer;

    #[test]
    fn blank_pair_has_no_keypoints() {
        let img = GrayImage::filled(96, 96, 0.4).unwrap();
        let r = match_pipeline(&img, &img, &NccScorer::new(32), &MatcherConfig::default(), &BankParams::default());
        assert!(matches!(r, Err(MatcherError::NoKeypoints('A'))));
    }

    #[test]
    fn small_image_rejected() {
        let img = GrayImage::filled(48, 96, 0.4).unwrap();
        let r = match_pipeline(&img, &img, &NccScorer::new(32), &MatcherConfig::default(), &BankParams::default());
        assert!(matches!(r, Err(MatcherError::InvalidInput(_))));
    }

    #[test]
    fn self_match_is_identity() {
        let img = GrayImage::from_fn(128, 128, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            let blocks = ((x / 19 + y / 23) % 3) as f64 / 3.0;
            (0.2 + 0.5 * blocks + 0.1 * (fx * 0.3).sin() * (fy * 0.2).cos()).clamp(0.0, 1.0)
        })
        .unwrap();
        let cfg = MatcherConfig {
            score_threshold: 0.5,
            ..Default::default()
        };
        let r = match_pipeline(&img, &img, &NccScorer::new(32), &cfg, &BankParams::default()).unwrap();
        assert_eq!(r.transform, crate::geometry::Similarity::translation(0.0, 0.0));
        assert!(r.inlier_count >= cfg.min_inliers);
        assert!(r.counts.inliers <= r.counts.accepted && r.counts.accepted <= r.counts.candidates);
    }
}
