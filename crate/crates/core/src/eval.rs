//! Match quality metrics against ground truth, ROC analysis of patch
//! scores, and report output.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::convnet::{Label, LabeledPair};
use crate::geometry::Similarity;
use crate::imaging::standardize_in_place;
use crate::matcher::{MatchLine, PatchScorer, StageTimings};
use crate::pc::Keypoint;

/// Precision of a match list against ground truth. `None` when the list is
/// empty; callers report that as 0 with an explicit flag.
pub fn precision(lines: &[MatchLine], gt: &Similarity, tolerance: f64) -> Option<f64> {
    if lines.is_empty() {
        return None;
    }
    let good = lines
        .iter()
        .filter(|l| gt.residual((l.ax as f64, l.ay as f64), (l.bx as f64, l.by as f64)) <= tolerance)
        .count();
    Some(good as f64 / lines.len() as f64)
}

/// Fraction of A keypoints, among those landing inside B under `gt`, that
/// have a B keypoint within `radius`. `None` when no A keypoint lands in B.
pub fn repeatability(
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    gt: &Similarity,
    radius: f64,
    size_b: (usize, usize),
) -> Option<f64> {
    let mut visible = 0usize;
    let mut hit = 0usize;
    for a in kps_a {
        let (x, y) = gt.apply((a.x as f64, a.y as f64));
        if x < 0.0 || y < 0.0 || x > (size_b.0 - 1) as f64 || y > (size_b.1 - 1) as f64 {
            continue;
        }
        visible += 1;
        if kps_b
            .iter()
            .any(|b| ((b.x as f64 - x).powi(2) + (b.y as f64 - y).powi(2)).sqrt() <= radius)
        {
            hit += 1;
        }
    }
    (visible > 0).then(|| hit as f64 / visible as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points from (score, is_positive) pairs, sweeping the threshold down
/// through each distinct score. Starts at (0, 0) and ends at (1, 1).
pub fn roc_curve(scored: &[(f64, bool)]) -> Vec<RocPoint> {
    let pos = scored.iter().filter(|s| s.1).count() as f64;
    let neg = scored.len() as f64 - pos;
    let mut sorted: Vec<(f64, bool)> = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let rate = |k: usize, n: f64| if n > 0.0 { k as f64 / n } else { 0.0 };
    let mut out = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push(RocPoint {
            threshold: s,
            fpr: rate(fp, neg),
            tpr: rate(tp, pos),
        });
    }
    out
}

/// Trapezoidal area under an ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Scores labeled patch pairs after standardizing both patches.
pub fn score_samples<S: LabeledPair + Sync>(samples: &[S], scorer: &dyn PatchScorer) -> Vec<(f64, bool)> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| {
            let (a, b) = s.patches();
            let mut pa = a.pixels().to_vec();
            let mut pb = b.pixels().to_vec();
            standardize_in_place(&mut pa);
            standardize_in_place(&mut pb);
            (scorer.score(&pa, &pb), s.label() == Label::Match)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEval {
    pub name: String,
    /// 0 when nothing was accepted; see `no_matches`.
    pub precision: f64,
    pub no_matches: bool,
    pub accepted: usize,
    pub correct: usize,
    pub inliers: usize,
    /// Inliers over detected A keypoints.
    pub recall_proxy: f64,
    pub repeatability: Option<f64>,
    /// Distance between the estimated and true translation, when a
    /// transform was estimated.
    pub translation_error: Option<f64>,
    pub runtimes: StageTimings,
}

impl PairEval {
    pub fn new(
        name: impl Into<String>,
        lines: &[MatchLine],
        estimated: Option<&Similarity>,
        gt: &Similarity,
        keypoints_a: usize,
        tolerance: f64,
    ) -> Self {
        let p = precision(lines, gt, tolerance);
        let correct = p.map_or(0, |p| (p * lines.len() as f64).round() as usize);
        let inliers = lines.iter().filter(|l| l.inlier).count();
        Self {
            name: name.into(),
            precision: p.unwrap_or(0.0),
            no_matches: p.is_none(),
            accepted: lines.len(),
            correct,
            inliers,
            recall_proxy: if keypoints_a == 0 {
                0.0
            } else {
                (inliers as f64 / keypoints_a as f64).min(1.0)
            },
            repeatability: None,
            translation_error: estimated.map(|t| ((t.tx - gt.tx).powi(2) + (t.ty - gt.ty).powi(2)).sqrt()),
            runtimes: StageTimings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocReport {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub accuracy_at_zero: f64,
}

impl RocReport {
    pub fn from_scores(scored: &[(f64, bool)]) -> Self {
        let points = roc_curve(scored);
        let correct = scored.iter().filter(|(s, p)| (*s > 0.0) == *p).count();
        Self {
            auc: auc(&points),
            points,
            accuracy_at_zero: if scored.is_empty() {
                0.0
            } else {
                correct as f64 / scored.len() as f64
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pairs: usize,
    pub median_precision: f64,
    pub mean_precision: f64,
    pub median_inliers: f64,
    /// Pairs whose estimated translation is within tolerance of truth.
    pub translation_ok: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tolerance: f64,
    pub pairs: Vec<PairEval>,
    pub summary: Summary,
    pub roc: Option<RocReport>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl EvalReport {
    pub fn new(tolerance: f64, pairs: Vec<PairEval>, roc: Option<RocReport>) -> Self {
        let prec: Vec<f64> = pairs.iter().map(|p| p.precision).collect();
        let inl: Vec<f64> = pairs.iter().map(|p| p.inliers as f64).collect();
        let summary = Summary {
            pairs: pairs.len(),
            median_precision: median(&prec),
            mean_precision: if prec.is_empty() {
                0.0
            } else {
                prec.iter().sum::<f64>() / prec.len() as f64
            },
            median_inliers: median(&inl),
            translation_ok: pairs
                .iter()
                .filter(|p| p.translation_error.is_some_and(|e| e <= tolerance))
                .count(),
        };
        Self {
            tolerance,
            pairs,
            summary,
            roc,
        }
    }

    pub fn write_json(&self, path: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        fs::write(path, text + "\n")
    }

    /// One row per pair; ROC points, when present, go to a second file
    /// next to `path` with a `.roc.csv` suffix.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        writeln!(
            out,
            "pair,precision,no_matches,accepted,correct,inliers,recall_proxy,repeatability,translation_error,detect_ms,score_ms,select_ms,consensus_ms"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        for p in &self.pairs {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{:.3},{:.3},{:.3},{:.3}",
                p.name,
                p.precision,
                p.no_matches,
                p.accepted,
                p.correct,
                p.inliers,
                p.recall_proxy,
                opt(p.repeatability),
                opt(p.translation_error),
                p.runtimes.detect_ms,
                p.runtimes.score_ms,
                p.runtimes.select_ms,
                p.runtimes.consensus_ms
            )?;
        }
        out.flush()?;
        if let Some(roc) = &self.roc {
            let mut s = path.as_os_str().to_owned();
            s.push(".roc.csv");
            let mut out = BufWriter::new(fs::File::create(Path::new(&s))?);
            writeln!(out, "threshold,fpr,tpr")?;
            for p in &roc.points {
                writeln!(out, "{},{},{}", p.threshold, p.fpr, p.tpr)?;
            }
            out.flush()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(ax: usize, ay: usize, bx: usize, by: usize) -> MatchLine {
        MatchLine {
            ax,
            ay,
            bx,
            by,
            score: 1.0,
            inlier: true,
        }
    }

    #[test]
    fn exact_matches_have_full_precision() {
        let gt = Similarity::translation(3.0, -2.0);
        let lines = [line(10, 10, 13, 8), line(40, 5, 43, 3)];
        assert_eq!(precision(&lines, &gt, 2.0), Some(1.0));
        let e = PairEval::new("p", &lines, Some(&gt), &gt, 4, 2.0);
        assert_eq!((e.precision, e.no_matches, e.correct, e.recall_proxy), (1.0, false, 2, 0.5));
        assert_eq!(e.translation_error, Some(0.0));
    }

    #[test]
    fn no_matches_flag() {
        let e = PairEval::new("p", &[], None, &Similarity::identity(), 10, 2.0);
        assert_eq!(e.precision, 0.0);
        assert!(e.no_matches);
        assert!(!e.precision.is_nan());
    }

    #[test]
    fn perfect_scorer_auc() {
        let scored = [(0.9, true), (0.8, true), (0.1, false), (-0.5, false)];
        let r = RocReport::from_scores(&scored);
        assert_eq!(r.auc, 1.0);
        let flipped: Vec<_> = scored.iter().map(|(s, p)| (-s, *p)).collect();
        assert_eq!(auc(&roc_curve(&flipped)), 0.0);
        let tied = [(0.5, true), (0.5, false)];
        assert_eq!(auc(&roc_curve(&tied)), 0.5);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[]), 0.0);
    }

    proptest! {
        #[test]
        fn roc_is_monotone(scored in proptest::collection::vec((-3.0f64..3.0, any::<bool>()), 1..60)) {
            let pts = roc_curve(&scored);
            for w in pts.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            let a = auc(&pts);
            prop_assert!((0.0..=1.0).contains(&a));
            for p in &pts {
                prop_assert!((0.0..=1.0).contains(&p.fpr) && (0.0..=1.0).contains(&p.tpr));
            }
        }
    }
}
