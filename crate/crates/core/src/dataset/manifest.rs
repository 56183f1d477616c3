use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    augment, check_patch_size, make_negatives, make_negatives_grouped, slice_positive, split,
    AlignedPair, AugmentOps, DatasetError, SampleRecord, Split, SplitRatios,
};
use crate::convnet::Label;
use crate::imaging::Patch;
use crate::rng::substream;

const HEADER: &str = "# phasematch-manifest 1";
const COLUMNS: &str = "# label size ax ay bx by pair_id split";

/// A labeled sample set with the seed and parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub params: BTreeMap<String, String>,
    pub records: Vec<SampleRecord>,
}

/// Sidecar holding the patch pixels of the manifest at `path`.
pub fn blob_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

impl Manifest {
    pub fn split(&mut self, ratios: SplitRatios, seed: u64) -> Result<(), DatasetError> {
        split(&mut self.records, ratios, seed)
    }

    pub fn subset(&self, which: Split) -> Vec<&SampleRecord> {
        self.records.iter().filter(|r| r.split == which).collect()
    }

    /// Writes the text manifest to `path` and pixels to [`blob_path`].
    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let mut text = BufWriter::new(fs::File::create(path)?);
        writeln!(text, "{HEADER}")?;
        writeln!(text, "# seed {}", self.seed)?;
        for (k, v) in &self.params {
            writeln!(text, "# param {k} {v}")?;
        }
        writeln!(text, "# records {}", self.records.len())?;
        writeln!(text, "{COLUMNS}")?;
        let mut blob = BufWriter::new(fs::File::create(blob_path(path))?);
        for r in &self.records {
            let sign = match r.label {
                Label::Match => "+1",
                Label::NonMatch => "-1",
            };
            writeln!(
                text,
                "{sign} {} {} {} {} {} {} {}",
                r.size(),
                r.a_center.0,
                r.a_center.1,
                r.b_center.0,
                r.b_center.1,
                r.pair_id,
                r.split
            )?;
            for &v in r.patch_a.pixels().iter().chain(r.patch_b.pixels()) {
                blob.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        text.flush()?;
        blob.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path)?;
        let blob = fs::read(blob_path(path))?;
        let mut lines = text.lines().enumerate();
        let err = |line: usize, msg: &str| DatasetError::ManifestParse {
            line: line + 1,
            msg: msg.to_string(),
        };
        match lines.next() {
            Some((_, l)) if l == HEADER => {}
            _ => return Err(err(0, "missing manifest header")),
        }
        let mut seed = None;
        let mut expected = None;
        let mut params = BTreeMap::new();
        let mut records = Vec::new();
        let mut offset = 0usize;
        for (no, line) in lines {
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim();
                if let Some(v) = rest.strip_prefix("seed ") {
                    seed = Some(v.parse().map_err(|_| err(no, "bad seed"))?);
                } else if let Some(v) = rest.strip_prefix("param ") {
                    let (k, v) = v.split_once(' ').ok_or_else(|| err(no, "bad param line"))?;
                    params.insert(k.to_string(), v.to_string());
                } else if let Some(v) = rest.strip_prefix("records ") {
                    expected = Some(v.parse::<usize>().map_err(|_| err(no, "bad record count"))?);
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 8 {
                return Err(err(no, "expected 8 fields"));
            }
            let int = |s: &str| s.parse::<i64>().map_err(|_| err(no, "bad integer"));
            let label = Label::from_sign(int(f[0])?).ok_or_else(|| err(no, "label must be +1 or -1"))?;
            let size = int(f[1])? as usize;
            check_patch_size(size).map_err(|_| err(no, "bad patch size"))?;
            let a_center = (int(f[2])?, int(f[3])?);
            let b_center = (int(f[4])?, int(f[5])?);
            let pair_id = f[6].parse::<u32>().map_err(|_| err(no, "bad pair id"))?;
            let split = f[7].parse::<Split>().map_err(|m| err(no, &m))?;
            let n = size * size;
            let mut take = |origin| -> Result<Patch, DatasetError> {
                let bytes = blob
                    .get(offset * 4..(offset + n) * 4)
                    .ok_or_else(|| DatasetError::BlobMismatch("blob ends early".into()))?;
                offset += n;
                let px = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect();
                Ok(Patch::new(size, px, origin)?)
            };
            let patch_a = take(a_center)?;
            let patch_b = take(b_center)?;
            records.push(SampleRecord {
                patch_a,
                patch_b,
                label,
                pair_id,
                a_center,
                b_center,
                split,
            });
        }
        if offset * 4 != blob.len() {
            return Err(DatasetError::BlobMismatch(format!(
                "{} trailing bytes",
                blob.len() - offset * 4
            )));
        }
        if let Some(n) = expected {
            if n != records.len() {
                return Err(DatasetError::BlobMismatch(format!(
                    "header declares {n} records, found {}",
                    records.len()
                )));
            }
        }
        Ok(Self {
            seed: seed.ok_or_else(|| err(0, "missing seed"))?,
            params,
            records,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub size: usize,
    pub stride: usize,
    /// Draw negatives across all pairs instead of within each pair.
    pub cross_pair: bool,
    pub ratios: SplitRatios,
    pub augment: AugmentOps,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            size: 32,
            stride: 16,
            cross_pair: false,
            ratios: SplitRatios::default(),
            augment: AugmentOps::default(),
            seed: 0,
        }
    }
}

impl BuildConfig {
    fn describe(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("size".into(), self.size.to_string());
        m.insert("stride".into(), self.stride.to_string());
        m.insert("cross_pair".into(), self.cross_pair.to_string());
        m.insert(
            "ratios".into(),
            format!("{},{},{}", self.ratios.train, self.ratios.val, self.ratios.test),
        );
        m.insert(
            "augment".into(),
            serde_json::to_string(&self.augment).unwrap_or_default(),
        );
        m
    }
}

/// Slices every pair, derives one negative per positive, augments, and
/// splits. Positives come first (in pair order), then negatives.
pub fn build_manifest(pairs: &[(u32, AlignedPair)], cfg: &BuildConfig) -> Result<Manifest, DatasetError> {
    check_patch_size(cfg.size)?;
    cfg.ratios.validate()?;
    cfg.augment.validate()?;
    let sliced: Vec<Vec<SampleRecord>> = pairs
        .par_iter()
        .map(|(id, p)| slice_positive(p, *id, cfg.size, cfg.stride))
        .collect::<Result<_, _>>()?;
    let positives: Vec<SampleRecord> = sliced.into_iter().flatten().collect();
    let mut master = substream(cfg.seed, 0);
    let neg_seed: u64 = master.random();
    let aug_seed: u64 = master.random();
    let split_seed: u64 = master.random();
    let negatives = if cfg.cross_pair {
        make_negatives(&positives, neg_seed)?
    } else {
        make_negatives_grouped(&positives, neg_seed)?
    };
    let mut records = positives;
    records.extend(negatives);
    let mut records = augment(&records, &cfg.augment, aug_seed)?;
    split(&mut records, cfg.ratios, split_seed)?;
    Ok(Manifest {
        seed: cfg.seed,
        params: cfg.describe(),
        records,
    })
}
