use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeometricModel, Match, MatchCandidate, MatchResult, MatcherConfig, MatcherError, StageCounts};
use crate::geometry::Similarity;
use crate::pc::Keypoint;

type Point = (f64, f64);

/// Exact fit to a minimal sample: one pair for translation (its offset),
/// two for similarity (closed form). `None` for a degenerate sample.
pub fn fit_minimal(model: GeometricModel, pairs: &[(Point, Point)]) -> Option<Similarity> {
    match model {
        GeometricModel::Translation => {
            let (a, b) = pairs.first()?;
            Some(Similarity::translation(b.0 - a.0, b.1 - a.1))
        }
        GeometricModel::Similarity => {
            let [(a0, b0), (a1, b1)] = pairs.get(..2)?.try_into().ok()?;
            let (ux, uy) = (a1.0 - a0.0, a1.1 - a0.1);
            let (vx, vy) = (b1.0 - b0.0, b1.1 - b0.1);
            let nu = (ux * ux + uy * uy).sqrt();
            let nv = (vx * vx + vy * vy).sqrt();
            if nu == 0.0 || nv == 0.0 {
                return None;
            }
            let rotation = vy.atan2(vx) - uy.atan2(ux);
            let t = Similarity {
                scale: nv / nu,
                rotation,
                tx: 0.0,
                ty: 0.0,
            };
            let (px, py) = t.apply(a0);
            Some(Similarity {
                tx: b0.0 - px,
                ty: b0.1 - py,
                ..t
            })
        }
    }
}

/// Least-squares fit over all pairs. Translation is the mean offset;
/// similarity uses the centered closed form (no reflection).
pub fn fit_least_squares(model: GeometricModel, pairs: &[(Point, Point)]) -> Option<Similarity> {
    if pairs.len() < model.min_samples() {
        return None;
    }
    let n = pairs.len() as f64;
    let (mut max, mut may, mut mbx, mut mby) = (0.0, 0.0, 0.0, 0.0);
    for (a, b) in pairs {
        max += a.0;
        may += a.1;
        mbx += b.0;
        mby += b.1;
    }
    let (max, may, mbx, mby) = (max / n, may / n, mbx / n, mby / n);
    match model {
        GeometricModel::Translation => {
            // averaging the offsets directly keeps exact integer data exact
            let (mut dx, mut dy) = (0.0, 0.0);
            for (a, b) in pairs {
                dx += b.0 - a.0;
                dy += b.1 - a.1;
            }
            Some(Similarity::translation(dx / n, dy / n))
        }
        GeometricModel::Similarity => {
            let (mut sc, mut ss, mut norm) = (0.0, 0.0, 0.0);
            for (a, b) in pairs {
                let (x, y) = (a.0 - max, a.1 - may);
                let (u, v) = (b.0 - mbx, b.1 - mby);
                sc += x * u + y * v;
                ss += x * v - y * u;
                norm += x * x + y * y;
            }
            if norm == 0.0 || (sc == 0.0 && ss == 0.0) {
                return None;
            }
            let t = Similarity {
                scale: (sc * sc + ss * ss).sqrt() / norm,
                rotation: ss.atan2(sc),
                tx: 0.0,
                ty: 0.0,
            };
            let (px, py) = t.apply((max, may));
            Some(Similarity {
                tx: mbx - px,
                ty: mby - py,
                ..t
            })
        }
    }
}

fn inlier_set(t: &Similarity, pairs: &[(Point, Point)], tol: f64) -> Vec<bool> {
    pairs.iter().map(|&(a, b)| t.residual(a, b) <= tol).collect()
}

fn count(mask: &[bool]) -> usize {
    mask.iter().filter(|&&m| m).count()
}

fn point(k: &Keypoint) -> Point {
    (k.x as f64, k.y as f64)
}

/// Seeded random-sample consensus over the selected matches.
///
/// Each iteration fits a minimal sample and counts matches within
/// `tolerance`; the largest set wins (earliest on ties). The winner is
/// refit by least squares and the inliers recomputed under the final
/// transform, so every reported inlier residual is within tolerance.
pub fn consensus_filter(
    matches: &[MatchCandidate],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    cfg: &MatcherConfig,
) -> Result<MatchResult, MatcherError> {
    cfg.validate()?;
    let needed = cfg.model.min_samples();
    if matches.len() < needed {
        return Err(MatcherError::InsufficientMatches {
            model: cfg.model,
            needed,
            got: matches.len(),
        });
    }
    for m in matches {
        if m.a >= kps_a.len() || m.b >= kps_b.len() {
            return Err(MatcherError::InvalidInput(format!(
                "match ({}, {}) indexes past the keypoint lists",
                m.a, m.b
            )));
        }
    }
    let pairs: Vec<(Point, Point)> = matches
        .iter()
        .map(|m| (point(&kps_a[m.a]), point(&kps_b[m.b])))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Vec<bool>)> = None;
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, pairs.len(), needed);
        let minimal: Vec<(Point, Point)> = idx.iter().map(|i| pairs[i]).collect();
        let Some(t) = fit_minimal(cfg.model, &minimal) else {
            continue;
        };
        let mask = inlier_set(&t, &pairs, cfg.tolerance);
        let n = count(&mask);
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, mask));
            if n == pairs.len() {
                break;
            }
        }
    }
    let best_n = best.as_ref().map_or(0, |(n, _)| *n);
    if best_n < cfg.min_inliers.max(needed) {
        return Err(MatcherError::NoConsensus {
            best: best_n,
            needed: cfg.min_inliers.max(needed),
        });
    }
    let (_, mut mask) = best.unwrap_or_default();

    // refit until the inlier set stops changing
    let mut transform = Similarity::identity();
    for _ in 0..10 {
        let subset: Vec<(Point, Point)> = pairs
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(p, _)| *p)
            .collect();
        let Some(t) = fit_least_squares(cfg.model, &subset) else {
            break;
        };
        let next = inlier_set(&t, &pairs, cfg.tolerance);
        if count(&next) < needed.max(1) {
            break;
        }
        transform = t;
        if next == mask {
            break;
        }
        mask = next;
    }
    let mask = inlier_set(&transform, &pairs, cfg.tolerance);
    let inlier_count = count(&mask);
    if inlier_count < cfg.min_inliers.max(needed) {
        return Err(MatcherError::NoConsensus {
            best: inlier_count,
            needed: cfg.min_inliers.max(needed),
        });
    }

    let out: Vec<Match> = matches
        .iter()
        .zip(&pairs)
        .zip(&mask)
        .map(|((m, &(a, b)), &inlier)| Match {
            a: m.a,
            b: m.b,
            score: m.score,
            inlier,
            residual: transform.residual(a, b),
        })
        .collect();
    let res: Vec<f64> = out.iter().filter(|m| m.inlier).map(|m| m.residual).collect();
    let mean_residual = res.iter().sum::<f64>() / res.len() as f64;
    let max_residual = res.iter().cloned().fold(0.0, f64::max);
    Ok(MatchResult {
        matches: out,
        transform,
        inlier_count,
        mean_residual,
        max_residual,
        counts: StageCounts {
            accepted: matches.len(),
            inliers: inlier_count,
            outliers: matches.len() - inlier_count,
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pc::KeypointKind;

    fn kp(x: f64, y: f64) -> Keypoint {
        Keypoint {
            x: x as usize,
            y: y as usize,
            strength: 1.0,
            kind: KeypointKind::Corner,
        }
    }

    fn setup(pts: &[(Point, Point)]) -> (Vec<MatchCandidate>, Vec<Keypoint>, Vec<Keypoint>) {
        let a = pts.iter().map(|(p, _)| kp(p.0, p.1)).collect();
        let b = pts.iter().map(|(_, q)| kp(q.0, q.1)).collect();
        let m = (0..pts.len()).map(|i| MatchCandidate { a: i, b: i, score: 1.0 }).collect();
        (m, a, b)
    }

    #[test]
    fn exact_translation() {
        let pts: Vec<_> = (0..10)
            .map(|i| {
                let a = (20.0 + 7.0 * i as f64, 30.0 + 3.0 * (i % 4) as f64);
                (a, (a.0 + 5.0, a.1 - 3.0))
            })
            .collect();
        let (m, a, b) = setup(&pts);
        let r = consensus_filter(&m, &a, &b, &MatcherConfig::default()).unwrap();
        assert_eq!(r.inlier_count, 10);
        assert_eq!(r.transform, Similarity::translation(5.0, -3.0));
        assert_eq!(r.max_residual, 0.0);
    }

    #[test]
    fn insufficient() {
        let (m, a, b) = setup(&[((10.0, 10.0), (12.0, 12.0))]);
        let cfg = MatcherConfig {
            model: GeometricModel::Similarity,
            ..Default::default()
        };
        assert!(matches!(
            consensus_filter(&m, &a, &b, &cfg),
            Err(MatcherError::InsufficientMatches { needed: 2, got: 1, .. })
        ));
        assert!(matches!(
            consensus_filter(&[], &a, &b, &MatcherConfig::default()),
            Err(MatcherError::InsufficientMatches { .. })
        ));
    }

    #[test]
    fn no_consensus() {
        let pts: Vec<_> = (0..6)
            .map(|i| ((10.0 * i as f64, 5.0), (10.0 * i as f64 + 13.0 * i as f64, 40.0)))
            .collect();
        let (m, a, b) = setup(&pts);
        assert!(matches!(
            consensus_filter(&m, &a, &b, &MatcherConfig::default()),
            Err(MatcherError::NoConsensus { best: 1, .. })
        ));
    }

    #[test]
    fn similarity_half_turn() {
        let t = Similarity {
            scale: 1.0,
            rotation: std::f64::consts::PI,
            tx: 200.0,
            ty: 150.0,
        };
        let mut pts: Vec<_> = (0..12)
            .map(|i| {
                let a = (10.0 + 11.0 * i as f64, 20.0 + 7.0 * ((i * 5) % 9) as f64);
                let (bx, by) = t.apply(a);
                (a, (bx.round(), by.round()))
            })
            .collect();
        pts.push(((40.0, 40.0), (10.0, 10.0)));
        let (m, a, b) = setup(&pts);
        let cfg = MatcherConfig {
            model: GeometricModel::Similarity,
            ..Default::default()
        };
        let r = consensus_filter(&m, &a, &b, &cfg).unwrap();
        assert_eq!(r.inlier_count, 12);
        assert!(!r.matches[12].inlier);
        assert!((r.transform.scale - 1.0).abs() < 1e-9);
        assert!((r.transform.rotation.rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-9);
        assert!(r.inliers().all(|m| m.residual <= cfg.tolerance));
    }

    #[test]
    fn minimal_fits_are_exact() {
        let t = Similarity {
            scale: 1.7,
            rotation: 0.4,
            tx: -3.0,
            ty: 9.0,
        };
        let a0 = (2.0, 3.0);
        let a1 = (-5.0, 8.0);
        let got = fit_minimal(GeometricModel::Similarity, &[(a0, t.apply(a0)), (a1, t.apply(a1))]).unwrap();
        assert!((got.scale - t.scale).abs() < 1e-12);
        assert!((got.rotation - t.rotation).abs() < 1e-12);
        assert!((got.tx - t.tx).abs() < 1e-12 && (got.ty - t.ty).abs() < 1e-12);
        assert!(fit_minimal(GeometricModel::Similarity, &[(a0, a0), (a0, a1)]).is_none());
        let ls = fit_least_squares(GeometricModel::Similarity, &[(a0, t.apply(a0)), (a1, t.apply(a1)), ((0.0, 0.0), t.apply((0.0, 0.0)))]).unwrap();
        assert!((ls.scale - t.scale).abs() < 1e-12 && (ls.rotation - t.rotation).abs() < 1e-12);
    }
}
