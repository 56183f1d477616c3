use rayon::prelude::*;

use super::{MatchCandidate, MatcherConfig, MatcherError};
use crate::convnet::{HeadKind, NetworkParams, PreparedNet};
use crate::imaging::{extract_patch, standardize_in_place, window_fits, GrayImage};
use crate::pc::Keypoint;

/// Similarity of two standardized, equally sized patches; larger means
/// more alike.
pub trait PatchScorer: Sync {
    fn patch_size(&self) -> usize;
    fn score(&self, a: &[f64], b: &[f64]) -> f64;
}

/// Scores with a trained 2-channel network.
pub struct NetScorer {
    net: PreparedNet,
}

impl NetScorer {
    pub fn new(params: &NetworkParams) -> Result<Self, MatcherError> {
        if params.spec().head != HeadKind::TwoChannel {
            return Err(MatcherError::InvalidInput(
                "matching needs a 2-channel model".into(),
            ));
        }
        Ok(Self {
            net: PreparedNet::new(params),
        })
    }
}

impl PatchScorer for NetScorer {
    fn patch_size(&self) -> usize {
        self.net.spec().input_size
    }

    fn score(&self, a: &[f64], b: &[f64]) -> f64 {
        self.net.score_pair(a, b)
    }
}

/// Normalized cross-correlation, in `[-1, 1]`.
pub struct NccScorer {
    size: usize,
}

impl NccScorer {
    pub fn new(size: usize) -> Self {
        Self { size }
    }
}

impl PatchScorer for NccScorer {
    fn patch_size(&self) -> usize {
        self.size
    }

    fn score(&self, a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        dot / a.len() as f64
    }
}

/// Standardized patches for the keypoints whose window fits; `None` for
/// those too close to an edge.
pub(crate) fn keypoint_patches(img: &GrayImage, kps: &[Keypoint], size: usize) -> Vec<Option<Vec<f64>>> {
    kps.par_iter()
        .map(|k| {
            let (x, y) = (k.x as i64, k.y as i64);
            if !window_fits(x, y, size, img.width(), img.height()) {
                return None;
            }
            let mut px = extract_patch(img, x, y, size).ok()?.into_pixels();
            standardize_in_place(&mut px);
            Some(px)
        })
        .collect()
}

fn gated(cfg: &MatcherConfig, a: &Keypoint, b: &Keypoint) -> bool {
    let Some(r) = cfg.search_radius else {
        return true;
    };
    let p = (a.x as f64, a.y as f64);
    let (ex, ey) = match &cfg.coarse_alignment {
        Some(t) => t.apply(p),
        None => p,
    };
    (b.x as f64 - ex).abs().max((b.y as f64 - ey).abs()) <= r
}

pub(crate) fn score_prepared(
    patches_a: &[Option<Vec<f64>>],
    patches_b: &[Option<Vec<f64>>],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    scorer: &dyn PatchScorer,
    cfg: &MatcherConfig,
) -> Vec<MatchCandidate> {
    let per_a: Vec<Vec<MatchCandidate>> = (0..kps_a.len())
        .into_par_iter()
        .map(|i| {
            let Some(pa) = &patches_a[i] else {
                return Vec::new();
            };
            kps_b
                .iter()
                .enumerate()
                .filter(|(j, kb)| patches_b[*j].is_some() && gated(cfg, &kps_a[i], kb))
                .map(|(j, _)| MatchCandidate {
                    a: i,
                    b: j,
                    score: scorer.score(pa, patches_b[j].as_deref().unwrap_or_default()),
                })
                .collect()
        })
        .collect();
    per_a.into_iter().flatten().collect()
}

/// Scores every gated (A, B) keypoint pair whose windows fit inside their
/// images. Candidates are ordered by A index, then B index, regardless of
/// how the work was scheduled.
pub fn score_candidates(
    img_a: &GrayImage,
    img_b: &GrayImage,
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    scorer: &dyn PatchScorer,
    cfg: &MatcherConfig,
) -> Result<Vec<MatchCandidate>, MatcherError> {
    cfg.validate()?;
    if scorer.patch_size() != cfg.patch_size {
        return Err(MatcherError::ModelShapeMismatch {
            model: scorer.patch_size(),
            config: cfg.patch_size,
        });
    }
    let pa = keypoint_patches(img_a, kps_a, cfg.patch_size);
    let pb = keypoint_patches(img_b, kps_b, cfg.patch_size);
    Ok(score_prepared(&pa, &pb, kps_a, kps_b, scorer, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::KeypointKind;

    fn kp(x: usize, y: usize) -> Keypoint {
        Keypoint {
            x,
            y,
            strength: 1.0,
            kind: KeypointKind::Corner,
        }
    }

    fn img() -> GrayImage {
        GrayImage::from_fn(96, 96, |x, y| ((x * 7 + y * 13) % 23) as f64 / 22.0).unwrap()
    }

    #[test]
    fn counts() {
        let cfg = MatcherConfig::default();
        let s = NccScorer::new(32);
        let a = [kp(20, 20), kp(40, 40), kp(62, 28)];
        let b = [kp(20, 20), kp(50, 40), kp(60, 60), kp(30, 70)];
        assert!(score_candidates(&img(), &img(), &[], &b, &s, &cfg).unwrap().is_empty());
        assert!(score_candidates(&img(), &img(), &a, &[], &s, &cfg).unwrap().is_empty());
        let c = score_candidates(&img(), &img(), &a, &b, &s, &cfg).unwrap();
        assert_eq!(c.len(), 12);
        let gated = MatcherConfig {
            search_radius: Some(10.0),
            ..cfg.clone()
        };
        let c = score_candidates(&img(), &img(), &a, &b, &s, &gated).unwrap();
        let pairs: Vec<_> = c.iter().map(|c| (c.a, c.b)).collect();
        assert_eq!(pairs, vec![(0, 0), (1, 1)]);
        assert!(matches!(
            score_candidates(&img(), &img(), &a, &b, &NccScorer::new(16), &cfg),
            Err(MatcherError::ModelShapeMismatch { .. })
        ));
    }

    #[test]
    fn ncc_self_is_one() {
        let s = NccScorer::new(32);
        let a = [kp(30, 30), kp(50, 60)];
        let c = score_candidates(&img(), &img(), &a, &a, &s, &MatcherConfig::default()).unwrap();
        for m in c.iter().filter(|m| m.a == m.b) {
            assert!((m.score - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn border_keypoints_skipped() {
        let s = NccScorer::new(32);
        let a = [kp(5, 5), kp(40, 40)];
        let c = score_candidates(&img(), &img(), &a, &a, &s, &MatcherConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].a, c[0].b), (1, 1));
    }
}
