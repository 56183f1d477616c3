use std::collections::HashMap;

use super::{MatchCandidate, MatcherConfig};

/// `true` when `c` beats `best` for the same row: higher score, then lower
/// index on the other side.
fn better(c: &MatchCandidate, best: &MatchCandidate, other: impl Fn(&MatchCandidate) -> usize) -> bool {
    c.score > best.score || (c.score == best.score && other(c) < other(best))
}

/// Keeps candidates scoring strictly above the threshold, then resolves
/// conflicts so each keypoint appears at most once on either side.
///
/// With `mutual_best`, `(a, b)` survives only when `b` is `a`'s best and
/// `a` is `b`'s best. Otherwise matches are taken greedily by descending
/// score. Output is sorted by A index.
pub fn select_matches(candidates: &[MatchCandidate], cfg: &MatcherConfig) -> Vec<MatchCandidate> {
    let kept: Vec<&MatchCandidate> = candidates
        .iter()
        .filter(|c| c.score > cfg.score_threshold)
        .collect();
    let mut out = if cfg.mutual_best {
        let mut best_a: HashMap<usize, &MatchCandidate> = HashMap::new();
        let mut best_b: HashMap<usize, &MatchCandidate> = HashMap::new();
        for &c in &kept {
            let e = best_a.entry(c.a).or_insert(c);
            if better(c, e, |m| m.b) {
                *e = c;
            }
            let e = best_b.entry(c.b).or_insert(c);
            if better(c, e, |m| m.a) {
                *e = c;
            }
        }
        best_a
            .values()
            .filter(|c| best_b.get(&c.b).is_some_and(|m| m.a == c.a))
            .map(|&&c| c)
            .collect::<Vec<_>>()
    } else {
        let mut sorted: Vec<&MatchCandidate> = kept.clone();
        sorted.sort_by(|x, y| {
            y.score
                .total_cmp(&x.score)
                .then(x.b.cmp(&y.b))
                .then(x.a.cmp(&y.a))
        });
        let mut used_a = std::collections::HashSet::new();
        let mut used_b = std::collections::HashSet::new();
        sorted
            .into_iter()
            .filter(|c| {
                if used_a.contains(&c.a) || used_b.contains(&c.b) {
                    return false;
                }
                used_a.insert(c.a);
                used_b.insert(c.b);
                true
            })
            .copied()
            .collect()
    };
    out.sort_by_key(|c| (c.a, c.b));
    out
}
