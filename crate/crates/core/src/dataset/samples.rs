use rand::seq::SliceRandom;
use rand::Rng;

use super::split::Split;
use super::{check_patch_size, AlignedPair, DatasetError};
use crate::convnet::{Label, LabeledPair};
use crate::geometry::Similarity;
use crate::imaging::{extract_patch, window_fits, GrayImage, Patch};
use crate::rng::substream;

/// One labeled 2-channel training sample and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub patch_a: Patch,
    pub patch_b: Patch,
    pub label: Label,
    pub pair_id: u32,
    /// Window center in image A.
    pub a_center: (i64, i64),
    /// Window center in image B (of the pair the B patch was taken from).
    pub b_center: (i64, i64),
    pub split: Split,
}

impl SampleRecord {
    pub fn size(&self) -> usize {
        self.patch_a.size()
    }

    /// Records sharing a key derive from the same positive and must stay
    /// in the same split.
    pub fn group_key(&self) -> (u32, i64, i64) {
        (self.pair_id, self.a_center.0, self.a_center.1)
    }
}

impl LabeledPair for SampleRecord {
    fn patches(&self) -> (&Patch, &Patch) {
        (&self.patch_a, &self.patch_b)
    }

    fn label(&self) -> Label {
        self.label
    }
}

fn bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (x0, y0) = (x0 as usize, y0 as usize);
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bot = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

// absorbs rounding in exact half/quarter-turn transforms
const EDGE_SLACK: f64 = 1e-9;

/// Samples `img` over the image of an A-side window under `t`; `None`
/// when any sample falls outside the raster.
fn warped_window(img: &GrayImage, t: &Similarity, x0: i64, y0: i64, size: usize) -> Option<Vec<f64>> {
    let (wmax, hmax) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size as i64 {
        for x in 0..size as i64 {
            let (bx, by) = t.apply(((x0 + x) as f64, (y0 + y) as f64));
            if !(-EDGE_SLACK..=wmax + EDGE_SLACK).contains(&bx)
                || !(-EDGE_SLACK..=hmax + EDGE_SLACK).contains(&by)
            {
                return None;
            }
            out.push(bilinear(img, bx.clamp(0.0, wmax), by.clamp(0.0, hmax)));
        }
    }
    Some(out)
}

fn integer_translation(t: &Similarity) -> Option<(i64, i64)> {
    let ok = t.is_translation() && t.tx.fract() == 0.0 && t.ty.fract() == 0.0;
    ok.then(|| (t.tx as i64, t.ty as i64))
}

/// Cuts co-located windows from both views on a regular grid over A.
///
/// Windows start at multiples of `stride` and must lie fully inside A; the
/// matching window in B must lie fully inside B or the position is
/// skipped. Integer translations copy B pixels directly; other transforms
/// resample B bilinearly so both patches cover the same scene content.
pub fn slice_positive(
    pair: &AlignedPair,
    pair_id: u32,
    size: usize,
    stride: usize,
) -> Result<Vec<SampleRecord>, DatasetError> {
    check_patch_size(size)?;
    if stride == 0 {
        return Err(DatasetError::InvalidParams("stride must be at least 1".into()));
    }
    let (wa, ha) = (pair.img_a.width(), pair.img_a.height());
    let (wb, hb) = (pair.img_b.width(), pair.img_b.height());
    let half = (size / 2) as i64;
    let shift = integer_translation(&pair.transform);
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 + size <= ha {
        let mut x0 = 0;
        while x0 + size <= wa {
            let (cx, cy) = (x0 as i64 + half, y0 as i64 + half);
            let patch_a = extract_patch(&pair.img_a, cx, cy, size)?;
            let emitted = match shift {
                Some((dx, dy)) => {
                    let (bx, by) = (cx + dx, cy + dy);
                    if window_fits(bx, by, size, wb, hb) {
                        Some(((bx, by), extract_patch(&pair.img_b, bx, by, size)?))
                    } else {
                        None
                    }
                }
                None => warped_window(&pair.img_b, &pair.transform, x0 as i64, y0 as i64, size)
                    .map(|px| {
                        let (bx, by) = pair.transform.apply((cx as f64, cy as f64));
                        let c = (bx.round() as i64, by.round() as i64);
                        Patch::new(size, px, c).map(|p| (c, p))
                    })
                    .transpose()?,
            };
            if let Some((b_center, patch_b)) = emitted {
                out.push(SampleRecord {
                    patch_a,
                    patch_b,
                    label: Label::Match,
                    pair_id,
                    a_center: (cx, cy),
                    b_center,
                    split: Split::Unassigned,
                });
            }
            x0 += stride;
        }
        y0 += stride;
    }
    if out.is_empty() {
        return Err(DatasetError::NoValidWindows);
    }
    Ok(out)
}

/// Uniformly random permutation of `0..n` without fixed points, by
/// rejection sampling.
pub fn derangement(n: usize, rng: &mut impl Rng) -> Result<Vec<usize>, DatasetError> {
    if n < 2 {
        return Err(DatasetError::CannotDerange(n));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return Ok(perm);
        }
    }
}

/// Re-pairs every A patch with a different record's B patch.
pub fn make_negatives(positives: &[SampleRecord], seed: u64) -> Result<Vec<SampleRecord>, DatasetError> {
    let perm = derangement(positives.len(), &mut substream(seed, 0))?;
    Ok(positives
        .iter()
        .zip(&perm)
        .map(|(p, &j)| SampleRecord {
            patch_a: p.patch_a.clone(),
            patch_b: positives[j].patch_b.clone(),
            label: Label::NonMatch,
            pair_id: p.pair_id,
            a_center: p.a_center,
            b_center: positives[j].b_center,
            split: p.split,
        })
        .collect())
}

/// Like [`make_negatives`], but only shuffles within runs of records that
/// share a `pair_id`, each with its own substream.
pub fn make_negatives_grouped(
    positives: &[SampleRecord],
    seed: u64,
) -> Result<Vec<SampleRecord>, DatasetError> {
    let mut out = Vec::with_capacity(positives.len());
    let mut start = 0;
    while start < positives.len() {
        let id = positives[start].pair_id;
        let end = start
            + positives[start..]
                .iter()
                .take_while(|r| r.pair_id == id)
                .count();
        let group_seed = substream(seed, 1 + id as u64).random();
        out.extend(make_negatives(&positives[start..end], group_seed)?);
        start = end;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Provenance;

    fn ramp_pair(w: usize, h: usize, t: Similarity) -> AlignedPair {
        let a = GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 251) as f64 / 251.0).unwrap();
        let b = GrayImage::from_fn(w, h, |x, y| ((x * 3 + y * 5) % 127) as f64 / 127.0).unwrap();
        AlignedPair::new(a, b, t, Provenance::External).unwrap()
    }

    #[test]
    fn identity_grid_count_and_content() {
        let pair = ramp_pair(64, 64, Similarity::identity());
        let recs = slice_positive(&pair, 0, 32, 32).unwrap();
        assert_eq!(recs.len(), 4);
        for r in &recs {
            assert_eq!(r.a_center, r.b_center);
            let (cx, cy) = r.a_center;
            assert_eq!(r.patch_a, extract_patch(&pair.img_a, cx, cy, 32).unwrap());
            assert_eq!(r.patch_b, extract_patch(&pair.img_b, cx, cy, 32).unwrap());
            assert_eq!(r.label, Label::Match);
        }
    }

    #[test]
    fn translation_matches_bruteforce() {
        for (dx, dy, stride) in [(8, 0, 8), (8, 0, 5), (-13, 7, 4), (0, 30, 16)] {
            let pair = ramp_pair(80, 72, Similarity::translation(dx as f64, dy as f64));
            let size = 16;
            let recs = slice_positive(&pair, 3, size, stride).unwrap();
            let mut expected = Vec::new();
            for y0 in (0..72).step_by(stride) {
                for x0 in (0..80).step_by(stride) {
                    let fits_a = x0 + size <= 80 && y0 + size <= 72;
                    let (bx0, by0) = (x0 as i64 + dx, y0 as i64 + dy);
                    let fits_b = bx0 >= 0 && by0 >= 0 && bx0 + size as i64 <= 80 && by0 + size as i64 <= 72;
                    if fits_a && fits_b {
                        expected.push((x0 as i64 + 8, y0 as i64 + 8));
                    }
                }
            }
            let got: Vec<_> = recs.iter().map(|r| r.a_center).collect();
            assert_eq!(got, expected);
            for r in &recs {
                assert_eq!(r.b_center, (r.a_center.0 + dx, r.a_center.1 + dy));
                let b = extract_patch(&pair.img_b, r.b_center.0, r.b_center.1, size).unwrap();
                assert_eq!(r.patch_b, b);
            }
        }
    }

    #[test]
    fn no_windows() {
        let pair = ramp_pair(64, 64, Similarity::translation(40.0, 0.0));
        assert!(matches!(slice_positive(&pair, 0, 32, 8), Err(DatasetError::NoValidWindows)));
    }

    #[test]
    fn half_turn_resamples_b() {
        // B is A rotated by 180 degrees about the image center
        let a = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 251) as f64 / 251.0).unwrap();
        let b = GrayImage::from_fn(64, 64, |x, y| a.get(63 - x, 63 - y)).unwrap();
        let t = Similarity {
            scale: 1.0,
            rotation: std::f64::consts::PI,
            tx: 63.0,
            ty: 63.0,
        };
        let pair = AlignedPair::new(a, b, t, Provenance::External).unwrap();
        let recs = slice_positive(&pair, 0, 16, 16).unwrap();
        assert_eq!(recs.len(), 16);
        for r in &recs {
            for (pa, pb) in r.patch_a.pixels().iter().zip(r.patch_b.pixels()) {
                assert!((pa - pb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn negatives_are_deranged() {
        let pair = ramp_pair(64, 64, Similarity::identity());
        let pos = slice_positive(&pair, 0, 16, 8).unwrap();
        let neg = make_negatives(&pos, 5).unwrap();
        assert_eq!(neg.len(), pos.len());
        for (p, n) in pos.iter().zip(&neg) {
            assert_eq!(n.label, Label::NonMatch);
            assert_eq!(n.patch_a, p.patch_a);
            assert_ne!(n.b_center, p.b_center);
        }
        assert_eq!(neg, make_negatives(&pos, 5).unwrap());
        assert!(matches!(make_negatives(&pos[..1], 0), Err(DatasetError::CannotDerange(1))));
    }

    #[test]
    fn derangement_fixed_seed_has_no_fixed_points() {
        let p = derangement(5, &mut substream(42, 0)).unwrap();
        let mut sorted = p.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
        for (i, &j) in p.iter().enumerate() {
            assert_ne!(i, j);
        }
    }

    #[test]
    fn grouped_negatives_stay_in_pair() {
        let mut pos = slice_positive(&ramp_pair(64, 64, Similarity::identity()), 0, 16, 16).unwrap();
        pos.extend(slice_positive(&ramp_pair(48, 48, Similarity::identity()), 1, 16, 16).unwrap());
        let neg = make_negatives_grouped(&pos, 3).unwrap();
        assert_eq!(neg.len(), pos.len());
        for n in &neg {
            let src = pos.iter().find(|p| p.b_center == n.b_center && p.pair_id == n.pair_id);
            assert!(src.is_some());
        }
    }
}
