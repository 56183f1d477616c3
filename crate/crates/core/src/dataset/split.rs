use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetError, SampleRecord};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "-",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "-" => Ok(Split::Unassigned),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, DatasetError> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let all = [self.train, self.val, self.test];
        let sum: f64 = all.iter().sum();
        if all.iter().all(|&v| v > 0.0 && v.is_finite()) && (sum - 1.0).abs() <= 1e-9 {
            Ok(())
        } else {
            Err(DatasetError::BadRatios((self.train, self.val, self.test)))
        }
    }
}

/// Tags records train/val/test. Records are grouped by
/// [`SampleRecord::group_key`]; the groups are shuffled with `seed` and cut
/// into contiguous runs of `round(ratio * groups)`, the test run taking the
/// remainder.
pub fn split(records: &mut [SampleRecord], ratios: SplitRatios, seed: u64) -> Result<(), DatasetError> {
    ratios.validate()?;
    let mut index: HashMap<(u32, i64, i64), usize> = HashMap::new();
    let mut groups = Vec::new();
    for r in records.iter() {
        let key = r.group_key();
        if !index.contains_key(&key) {
            index.insert(key, groups.len());
            groups.push(key);
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut substream(seed, 0));
    let g = groups.len();
    let n_train = ((ratios.train * g as f64).round() as usize).min(g);
    let n_val = ((ratios.val * g as f64).round() as usize).min(g - n_train);
    let mut tag = vec![Split::Test; g];
    for (rank, &gi) in order.iter().enumerate() {
        tag[gi] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    for r in records.iter_mut() {
        r.split = tag[index[&r.group_key()]];
    }
    Ok(())
}
