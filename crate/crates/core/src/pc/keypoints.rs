use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{PcError, PcMaps};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeypointKind {
    /// Maximum of the minimum-moment map.
    Corner,
    /// Maximum of the maximum-moment map.
    Edge,
}

impl fmt::Display for KeypointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KeypointKind::Corner => "corner",
            KeypointKind::Edge => "edge",
        })
    }
}

impl FromStr for KeypointKind {
    type Err = PcError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "corner" => Ok(KeypointKind::Corner),
            "edge" => Ok(KeypointKind::Edge),
            other => Err(PcError::KeypointFile(format!("unknown keypoint kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub strength: f64,
    pub kind: KeypointKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    /// `mean + k * stddev` of the moment map being searched.
    MeanPlusStd(f64),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindSelection {
    Corners,
    Edges,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectParams {
    /// Chebyshev radius of the suppression window.
    pub nms_radius: usize,
    pub threshold: Threshold,
    pub max_count: usize,
    /// Minimum distance, in pixels, from every image edge.
    pub border: usize,
    pub kinds: KindSelection,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            nms_radius: 5,
            threshold: Threshold::MeanPlusStd(1.0),
            max_count: 500,
            border: 16,
            kinds: KindSelection::Corners,
        }
    }
}

/// Strict local maxima of the moment maps, strongest first.
pub fn detect_keypoints(maps: &PcMaps, params: &DetectParams) -> Vec<Keypoint> {
    let radius = params.nms_radius.max(1);
    let mut out = Vec::new();
    if matches!(params.kinds, KindSelection::Corners | KindSelection::Both) {
        out.extend(suppress(maps, maps.min_moment(), radius, params, KeypointKind::Corner));
    }
    if matches!(params.kinds, KindSelection::Edges | KindSelection::Both) {
        out.extend(suppress(maps, maps.max_moment(), radius, params, KeypointKind::Edge));
    }
    out.sort_by(|a, b| {
        b.strength
            .total_cmp(&a.strength)
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    out.truncate(params.max_count);
    out
}

fn suppress(
    maps: &PcMaps,
    map: &[f64],
    radius: usize,
    params: &DetectParams,
    kind: KeypointKind,
) -> Vec<Keypoint> {
    let (w, h) = (maps.width(), maps.height());
    let threshold = match params.threshold {
        Threshold::Fixed(t) => t,
        Threshold::MeanPlusStd(k) => {
            let n = map.len() as f64;
            let mean = map.iter().sum::<f64>() / n;
            let var = map.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            mean + k * var.sqrt()
        }
    };
    if params.border * 2 >= w || params.border * 2 >= h {
        return Vec::new();
    }
    let mut found = Vec::new();
    for y in params.border..h - params.border {
        for x in params.border..w - params.border {
            let v = map[y * w + x];
            if v < threshold || v <= 0.0 {
                continue;
            }
            if is_strict_max(map, w, h, x, y, radius) {
                found.push(Keypoint {
                    x,
                    y,
                    strength: v,
                    kind,
                });
            }
        }
    }
    found
}

fn is_strict_max(map: &[f64], w: usize, h: usize, x: usize, y: usize, r: usize) -> bool {
    let v = map[y * w + x];
    let (y_lo, y_hi) = (y.saturating_sub(r), (y + r).min(h - 1));
    let (x_lo, x_hi) = (x.saturating_sub(r), (x + r).min(w - 1));
    for ny in y_lo..=y_hi {
        for nx in x_lo..=x_hi {
            if (nx, ny) != (x, y) && map[ny * w + nx] >= v {
                return false;
            }
        }
    }
    true
}

/// Writes `x y strength kind` lines after a `#` header.
pub fn write_keypoints(path: impl AsRef<Path>, keypoints: &[Keypoint]) -> Result<(), PcError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# x y strength kind")?;
    for kp in keypoints {
        writeln!(out, "{} {} {:e} {}", kp.x, kp.y, kp.strength, kp.kind)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Keypoint>, PcError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || PcError::KeypointFile(format!("line {}: '{line}'", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        out.push(Keypoint {
            x: fields[0].parse().map_err(|_| bad())?,
            y: fields[1].parse().map_err(|_| bad())?,
            strength: fields[2].parse().map_err(|_| bad())?,
            kind: fields[3].parse()?,
        });
    }
    Ok(out)
}
