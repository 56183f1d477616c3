use std::collections::HashMap;

use proptest::prelude::*;

use phasematch::dataset::{
    build_manifest, slice_positive, AlignedPair, AugmentOps, BuildConfig, DatasetError, Provenance, Split, SplitRatios,
};
use phasematch::geometry::Similarity;
use phasematch::imaging::{extract_patch, load_gray, save_gray, GrayImage};
use phasematch::matcher::{consensus_filter, run_pipeline, MatchCandidate, MatcherConfig, NccScorer};
use phasematch::pc::{compute_pc_maps, BankParams, DetectParams, Keypoint, KeypointKind, LogGaborBank, Threshold};

fn hashed(w: usize, h: usize, seed: u64) -> GrayImage {
    GrayImage::from_fn(w, h, |x, y| {
        let mut v = (x as u64).wrapping_mul(0x9E37_79B9) ^ (y as u64).wrapping_mul(0x85EB_CA6B) ^ seed;
        v = v.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
        ((v >> 40) as f64 / (1u64 << 24) as f64).clamp(0.0, 1.0)
    })
    .unwrap()
}

fn smooth(w: usize, h: usize, seed: u64) -> GrayImage {
    let s = seed as f64;
    GrayImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        (0.5 + 0.2 * (0.21 * x + 0.07 * y + s).sin() + 0.15 * (0.05 * x - 0.33 * y + 2.0 * s).cos()
            + 0.1 * ((x - 30.0).hypot(y - 25.0) * 0.4).sin())
        .clamp(0.0, 1.0)
    })
    .unwrap()
}

fn kp(x: usize, y: usize) -> Keypoint {
    Keypoint { x, y, strength: 1.0, kind: KeypointKind::Corner }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pgm_roundtrip_within_one_level(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
        let img = hashed(w, h, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        save_gray(&img, &path).unwrap();
        let back = load_gray(&path).unwrap();
        prop_assert_eq!((back.width(), back.height()), (w, h));
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn positives_lie_inside_both_views(
        tx in -12i64..=12, ty in -12i64..=12, size in prop::sample::select(vec![16usize, 32]), stride in 4usize..24,
    ) {
        let a = hashed(72, 64, 1);
        let b = hashed(72, 64, 2);
        let pair = AlignedPair::new(a.clone(), b.clone(), Similarity::translation(tx as f64, ty as f64), Provenance::External).unwrap();
        let half = size as i64 / 2;
        let inside = |c: (i64, i64), img: &GrayImage| {
            c.0 - half >= 0 && c.1 - half >= 0 && c.0 + half <= img.width() as i64 && c.1 + half <= img.height() as i64
        };
        let recs = match slice_positive(&pair, 0, size, stride) {
            Ok(r) => r,
            // large shifts can leave no window inside both views
            Err(DatasetError::NoValidWindows) => Vec::new(),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        for r in &recs {
            prop_assert!(inside(r.a_center, &a));
            prop_assert!(inside(r.b_center, &b));
            prop_assert_eq!(r.b_center, (r.a_center.0 + tx, r.a_center.1 + ty));
            prop_assert_eq!(&r.patch_a, &extract_patch(&a, r.a_center.0, r.a_center.1, size).unwrap());
            let pb = extract_patch(&b, r.b_center.0, r.b_center.1, size).unwrap();
            prop_assert_eq!(r.patch_b.pixels(), pb.pixels());
        }
    }

    #[test]
    fn groups_never_straddle_splits(seed in any::<u64>(), cross in any::<bool>(), flip in any::<bool>()) {
        let pairs: Vec<(u32, AlignedPair)> = (0..3u32)
            .map(|i| {
                let p = AlignedPair::new(hashed(64, 64, i as u64), hashed(64, 64, 10 + i as u64), Similarity::identity(), Provenance::External).unwrap();
                (i, p)
            })
            .collect();
        let cfg = BuildConfig {
            size: 16,
            stride: 8,
            cross_pair: cross,
            ratios: SplitRatios::new(0.6, 0.2, 0.2).unwrap(),
            augment: AugmentOps { hflip: flip, ..Default::default() },
            seed,
        };
        let m = build_manifest(&pairs, &cfg).unwrap();
        let mut tag: HashMap<(u32, i64, i64), Split> = HashMap::new();
        for r in &m.records {
            prop_assert!(r.split != Split::Unassigned);
            let t = *tag.entry(r.group_key()).or_insert(r.split);
            prop_assert_eq!(t, r.split);
        }
        let again = build_manifest(&pairs, &cfg).unwrap();
        prop_assert_eq!(m, again);
    }

    #[test]
    fn consensus_inliers_respect_tolerance(
        pts in prop::collection::vec(((20usize..200, 20usize..200), (0usize..220, 0usize..220)), 2..30),
        tol in 0.5f64..5.0,
        seed in any::<u64>(),
    ) {
        let a: Vec<Keypoint> = pts.iter().map(|p| kp(p.0.0, p.0.1)).collect();
        // half the matches follow one translation, the rest are arbitrary
        let b: Vec<Keypoint> = pts
            .iter()
            .enumerate()
            .map(|(i, p)| if i % 2 == 0 { kp(p.0.0 + 5, p.0.1 + 3) } else { kp(p.1.0, p.1.1) })
            .collect();
        let m: Vec<MatchCandidate> = (0..pts.len()).map(|i| MatchCandidate { a: i, b: i, score: 1.0 }).collect();
        let cfg = MatcherConfig { tolerance: tol, min_inliers: 1, iterations: 100, seed, ..Default::default() };
        let first = consensus_filter(&m, &a, &b, &cfg);
        let second = consensus_filter(&m, &a, &b, &cfg);
        prop_assert_eq!(format!("{first:?}"), format!("{second:?}"));
        if let Ok(r) = first {
            prop_assert_eq!(r.inlier_count, r.matches.iter().filter(|m| m.inlier).count());
            for x in r.inliers() {
                let res = r.transform.residual((a[x.a].x as f64, a[x.a].y as f64), (b[x.b].x as f64, b[x.b].y as f64));
                prop_assert!(res <= tol + 1e-9);
                prop_assert!((res - x.residual).abs() < 1e-9);
            }
            prop_assert!(r.max_residual <= tol + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn moment_bounds_hold(seed in any::<u64>(), noise in any::<bool>()) {
        let img = smooth(64, 56, seed % 1000);
        let params = BankParams::default();
        let bank = LogGaborBank::build(&params, 64, 56).unwrap();
        let maps = compute_pc_maps(&img, &bank, noise).unwrap();
        let n = params.n_orientations as f64;
        for pc in maps.per_orientation() {
            prop_assert!(pc.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        for (big, small) in maps.max_moment().iter().zip(maps.min_moment()) {
            prop_assert!(*small >= 0.0 && small <= big && *big <= n + 1e-12);
        }
    }

    #[test]
    fn pipeline_counts_are_consistent(seed in 0u64..50, shift in 0usize..6, threshold in 0.0f64..0.9) {
        let a = smooth(96, 96, seed);
        let b = GrayImage::from_fn(96, 96, |x, y| a.get(x.saturating_sub(shift), y)).unwrap();
        let cfg = MatcherConfig {
            score_threshold: threshold,
            min_inliers: 1,
            detect: DetectParams { nms_radius: 3, threshold: Threshold::MeanPlusStd(0.0), ..Default::default() },
            ..Default::default()
        };
        let run = run_pipeline(&a, &b, &NccScorer::new(32), &cfg, &BankParams::default()).unwrap();
        let c = run.counts;
        prop_assert_eq!(c.keypoints_a, run.keypoints_a.len());
        prop_assert_eq!(c.keypoints_b, run.keypoints_b.len());
        prop_assert!(c.border_skipped_a <= c.keypoints_a && c.border_skipped_b <= c.keypoints_b);
        prop_assert!(c.candidates <= (c.keypoints_a - c.border_skipped_a) * (c.keypoints_b - c.border_skipped_b));
        prop_assert_eq!(c.below_threshold + c.not_selected + c.accepted, c.candidates);
        prop_assert_eq!(c.accepted, run.selected.len());
        prop_assert_eq!(c.inliers + c.outliers, c.accepted);
        match &run.result {
            Ok(r) => {
                prop_assert_eq!(r.inlier_count, c.inliers);
                prop_assert_eq!(r.matches.len(), c.accepted);
            }
            Err(_) => prop_assert_eq!(c.inliers, 0),
        }
        let mut seen_a = std::collections::HashSet::new();
        let mut seen_b = std::collections::HashSet::new();
        for m in &run.selected {
            prop_assert!(seen_a.insert(m.a) && seen_b.insert(m.b));
        }
    }
}
