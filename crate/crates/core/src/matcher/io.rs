use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MatchCandidate, MatchResult, MatcherError, StageCounts};
use crate::geometry::Similarity;
use crate::pc::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchLine {
    pub ax: usize,
    pub ay: usize,
    pub bx: usize,
    pub by: usize,
    pub score: f64,
    pub inlier: bool,
}

/// Contents of a match file: one line per accepted match plus the
/// estimated transform (absent when verification failed) and counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchFile {
    pub lines: Vec<MatchLine>,
    pub transform: Option<Similarity>,
    pub counts: StageCounts,
}

impl MatchFile {
    pub fn from_result(r: &MatchResult, kps_a: &[Keypoint], kps_b: &[Keypoint]) -> Self {
        Self {
            lines: r
                .matches
                .iter()
                .map(|m| MatchLine {
                    ax: kps_a[m.a].x,
                    ay: kps_a[m.a].y,
                    bx: kps_b[m.b].x,
                    by: kps_b[m.b].y,
                    score: m.score,
                    inlier: m.inlier,
                })
                .collect(),
            transform: Some(r.transform),
            counts: r.counts,
        }
    }

    /// Selected matches that did not reach a consensus.
    pub fn unverified(selected: &[MatchCandidate], kps_a: &[Keypoint], kps_b: &[Keypoint], counts: StageCounts) -> Self {
        Self {
            lines: selected
                .iter()
                .map(|m| MatchLine {
                    ax: kps_a[m.a].x,
                    ay: kps_a[m.a].y,
                    bx: kps_b[m.b].x,
                    by: kps_b[m.b].y,
                    score: m.score,
                    inlier: false,
                })
                .collect(),
            transform: None,
            counts,
        }
    }
}

const COUNT_KEYS: [&str; 10] = [
    "keypoints_a",
    "keypoints_b",
    "border_skipped_a",
    "border_skipped_b",
    "candidates",
    "below_threshold",
    "not_selected",
    "accepted",
    "outliers",
    "inliers",
];

fn count_values(c: &StageCounts) -> [usize; 10] {
    [
        c.keypoints_a,
        c.keypoints_b,
        c.border_skipped_a,
        c.border_skipped_b,
        c.candidates,
        c.below_threshold,
        c.not_selected,
        c.accepted,
        c.outliers,
        c.inliers,
    ]
}

pub fn write_matches(path: &Path, file: &MatchFile) -> Result<(), MatcherError> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# ax ay bx by score inlier")?;
    for l in &file.lines {
        writeln!(
            out,
            "{} {} {} {} {:e} {}",
            l.ax, l.ay, l.bx, l.by, l.score, l.inlier as u8
        )?;
    }
    match &file.transform {
        Some(t) => writeln!(out, "# transform {} {} {} {}", t.scale, t.rotation, t.tx, t.ty)?,
        None => writeln!(out, "# transform none")?,
    }
    for (k, v) in COUNT_KEYS.iter().zip(count_values(&file.counts)) {
        writeln!(out, "# {k} {v}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_matches(path: &Path) -> Result<MatchFile, MatcherError> {
    let text = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    let mut transform = None;
    let mut counts = [0usize; 10];
    let bad = |no: usize, m: &str| MatcherError::MatchFile(format!("line {}: {m}", no + 1));
    for (no, line) in text.lines().enumerate() {
        if let Some(rest) = line.strip_prefix('#') {
            let f: Vec<&str> = rest.split_whitespace().collect();
            match f.as_slice() {
                ["transform", "none"] => transform = None,
                ["transform", s, r, x, y] => {
                    let p = |v: &str| v.parse::<f64>().map_err(|_| bad(no, "bad transform"));
                    transform = Some(Similarity {
                        scale: p(s)?,
                        rotation: p(r)?,
                        tx: p(x)?,
                        ty: p(y)?,
                    });
                }
                [k, v] => {
                    if let Some(i) = COUNT_KEYS.iter().position(|c| c == k) {
                        counts[i] = v.parse().map_err(|_| bad(no, "bad count"))?;
                    }
                }
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(no, "expected 6 fields"));
        }
        let u = |v: &str| v.parse::<usize>().map_err(|_| bad(no, "bad coordinate"));
        lines.push(MatchLine {
            ax: u(f[0])?,
            ay: u(f[1])?,
            bx: u(f[2])?,
            by: u(f[3])?,
            score: f[4].parse().map_err(|_| bad(no, "bad score"))?,
            inlier: match f[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad(no, "inlier flag must be 0 or 1")),
            },
        });
    }
    let [keypoints_a, keypoints_b, border_skipped_a, border_skipped_b, candidates, below_threshold, not_selected, accepted, outliers, inliers] =
        counts;
    Ok(MatchFile {
        lines,
        transform,
        counts: StageCounts {
            keypoints_a,
            keypoints_b,
            border_skipped_a,
            border_skipped_b,
            candidates,
            below_threshold,
            not_selected,
            accepted,
            outliers,
            inliers,
        },
    })
}
