use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetError, SampleRecord};
use crate::imaging::Patch;
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentOps {
    pub hflip: bool,
    pub vflip: bool,
    pub rot90: bool,
    /// Each output patch gets `v^g` with `log g` uniform over the log range.
    pub gamma_jitter: Option<(f64, f64)>,
}

impl AugmentOps {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if let Some((lo, hi)) = self.gamma_jitter {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(DatasetError::InvalidParams(format!(
                    "gamma jitter range ({lo}, {hi}) must lie in (0, inf)"
                )));
            }
        }
        Ok(())
    }

    fn geometric(&self) -> Vec<fn(&Patch) -> Patch> {
        let mut ops: Vec<fn(&Patch) -> Patch> = Vec::new();
        if self.hflip {
            ops.push(hflip);
        }
        if self.vflip {
            ops.push(vflip);
        }
        if self.rot90 {
            ops.push(rot90);
        }
        ops
    }
}

fn remap(p: &Patch, f: impl Fn(usize, usize) -> (usize, usize)) -> Patch {
    let n = p.size();
    let mut out = p.clone();
    for y in 0..n {
        for x in 0..n {
            let (sx, sy) = f(x, y);
            out.pixels_mut()[y * n + x] = p.get(sx, sy);
        }
    }
    out
}

pub(crate) fn hflip(p: &Patch) -> Patch {
    let n = p.size();
    remap(p, |x, y| (n - 1 - x, y))
}

pub(crate) fn vflip(p: &Patch) -> Patch {
    let n = p.size();
    remap(p, |x, y| (x, n - 1 - y))
}

/// Quarter turn counter-clockwise.
pub(crate) fn rot90(p: &Patch) -> Patch {
    let n = p.size();
    remap(p, |x, y| (n - 1 - y, x))
}

fn jitter(p: &mut Patch, (lo, hi): (f64, f64), rng: &mut impl Rng) {
    let g = if lo == hi {
        lo
    } else {
        rng.random_range(lo.ln()..hi.ln()).exp()
    };
    for v in p.pixels_mut() {
        *v = v.clamp(0.0, 1.0).powf(g).clamp(0.0, 1.0);
    }
}

/// Returns each record followed by one copy per enabled geometric op
/// (applied to both patches alike). Gamma jitter, when enabled, is then
/// applied to every output patch independently.
pub fn augment(records: &[SampleRecord], ops: &AugmentOps, seed: u64) -> Result<Vec<SampleRecord>, DatasetError> {
    ops.validate()?;
    let geo = ops.geometric();
    let mut out = Vec::with_capacity(records.len() * (geo.len() + 1));
    for (i, r) in records.iter().enumerate() {
        let first = out.len();
        out.push(r.clone());
        for op in &geo {
            out.push(SampleRecord {
                patch_a: op(&r.patch_a),
                patch_b: op(&r.patch_b),
                ..r.clone()
            });
        }
        if let Some(range) = ops.gamma_jitter {
            let mut rng = substream(seed, i as u64);
            for rec in &mut out[first..] {
                jitter(&mut rec.patch_a, range, &mut rng);
                jitter(&mut rec.patch_b, range, &mut rng);
            }
        }
    }
    Ok(out)
}
