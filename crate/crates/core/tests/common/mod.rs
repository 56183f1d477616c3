//! Independent oracles shared by the integration suites.
#![allow(dead_code)]

use phasematch::convnet::{backward, ConvBlock, HeadKind, Label, LossKind, NetSpec, NetworkParams};
use phasematch::imaging::Patch;

/// Straightforward direct-convolution forward pass in `f64`.
///
/// Returns the score plus a signature of every piecewise-linear branch taken
/// (ReLU signs and pooling winners), so callers can tell when a finite
/// difference step crossed a kink.
pub fn naive_forward(spec: &NetSpec, layers: &[(Vec<f64>, Vec<f64>)], input: &[f64]) -> (f64, Vec<u32>) {
    let mut signature = Vec::new();
    let mut x = input.to_vec();
    let mut ch = spec.head.input_channels();
    let mut side = spec.input_size;
    for (bi, block) in spec.blocks.iter().enumerate() {
        let (w, b) = &layers[bi];
        let k = block.kernel;
        let sc = side - k + 1;
        let mut z = vec![0.0; block.out_ch * sc * sc];
        for o in 0..block.out_ch {
            for y in 0..sc {
                for xx in 0..sc {
                    let mut acc = b[o];
                    for c in 0..ch {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += w[((o * ch + c) * k + ky) * k + kx]
                                    * x[(c * side + y + ky) * side + xx + kx];
                            }
                        }
                    }
                    z[(o * sc + y) * sc + xx] = acc;
                }
            }
        }
        for v in &mut z {
            signature.push((*v > 0.0) as u32);
            *v = v.max(0.0);
        }
        let so = sc / 2;
        let mut pooled = vec![0.0; block.out_ch * so * so];
        for o in 0..block.out_ch {
            for py in 0..so {
                for px in 0..so {
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = 0;
                    for (i, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].iter().enumerate() {
                        let v = z[(o * sc + 2 * py + dy) * sc + 2 * px + dx];
                        if v > best {
                            best = v;
                            arg = i as u32;
                        }
                    }
                    // Winner identity only matters when the window is live.
                    signature.push(if best > 0.0 { arg } else { 9 });
                    pooled[(o * so + py) * so + px] = best;
                }
            }
        }
        x = pooled;
        ch = block.out_ch;
        side = so;
    }
    let (w, b) = layers.last().unwrap();
    let score = b[0] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    (score, signature)
}

pub fn naive_loss(score: f64, label: f64, kind: LossKind) -> f64 {
    match kind {
        LossKind::Hinge => (1.0 - label * score).max(0.0),
        LossKind::Logistic => (1.0 + (-label * score).exp()).ln(),
    }
}

pub fn params_f64(params: &NetworkParams) -> Vec<(Vec<f64>, Vec<f64>)> {
    params
        .layers()
        .iter()
        .map(|l| {
            (
                l.weight.data().iter().map(|&v| v as f64).collect(),
                l.bias.data().iter().map(|&v| v as f64).collect(),
            )
        })
        .collect()
}

/// Mean loss over a batch and the concatenated branch signature.
pub fn batch_loss(
    spec: &NetSpec,
    layers: &[(Vec<f64>, Vec<f64>)],
    batch: &[(Vec<f64>, f64)],
    kind: LossKind,
) -> (f64, Vec<u32>) {
    let mut total = 0.0;
    let mut sig = Vec::new();
    for (x, y) in batch {
        let (s, mut g) = naive_forward(spec, layers, x);
        total += naive_loss(s, *y, kind);
        sig.append(&mut g);
        if kind == LossKind::Hinge {
            sig.push((y * s < 1.0) as u32);
        }
    }
    (total / batch.len() as f64, sig)
}

pub struct GradCheck {
    pub checked: usize,
    /// Entries where the step `h` crossed a ReLU/pool/hinge branch and a
    /// smaller step was used instead.
    pub refined: usize,
    /// Entries where even the smallest step crossed a branch.
    pub skipped_kinks: usize,
    pub worst_rel: f64,
}

/// Compares analytic gradients against central differences with step `h`.
///
/// The loss is piecewise smooth in each parameter. When the `+-h` probe
/// changes a branch the difference quotient is meaningless, so the step is
/// shrunk by factors of ten (down to `h / 1000`) until both probes stay on
/// the base branch.
pub fn check_gradients(
    spec: &NetSpec,
    params: &NetworkParams,
    batch: &[(Vec<f64>, f64)],
    kind: LossKind,
    analytic: &[(Vec<f64>, Vec<f64>)],
    h: f64,
) -> GradCheck {
    let base = params_f64(params);
    let (_, base_sig) = batch_loss(spec, &base, batch, kind);
    let mut out = GradCheck {
        checked: 0,
        refined: 0,
        skipped_kinks: 0,
        worst_rel: 0.0,
    };
    for li in 0..base.len() {
        for part in 0..2 {
            let n = if part == 0 { base[li].0.len() } else { base[li].1.len() };
            for j in 0..n {
                let probe = |step: f64| {
                    let mut plus = base.clone();
                    let mut minus = base.clone();
                    if part == 0 {
                        plus[li].0[j] += step;
                        minus[li].0[j] -= step;
                    } else {
                        plus[li].1[j] += step;
                        minus[li].1[j] -= step;
                    }
                    let (lp, sp) = batch_loss(spec, &plus, batch, kind);
                    let (lm, sm) = batch_loss(spec, &minus, batch, kind);
                    (sp == base_sig && sm == base_sig).then(|| (lp - lm) / (2.0 * step))
                };
                let mut numeric = None;
                for (attempt, step) in [h, h / 10.0, h / 100.0, h / 1000.0].into_iter().enumerate() {
                    if let Some(v) = probe(step) {
                        if attempt > 0 {
                            out.refined += 1;
                        }
                        numeric = Some(v);
                        break;
                    }
                }
                let Some(numeric) = numeric else {
                    out.skipped_kinks += 1;
                    continue;
                };
                let a = if part == 0 { analytic[li].0[j] } else { analytic[li].1[j] };
                let scale = a.abs().max(numeric.abs());
                let rel = if scale < 1e-9 { 0.0 } else { (a - numeric).abs() / scale };
                out.worst_rel = out.worst_rel.max(rel);
                out.checked += 1;
            }
        }
    }
    out
}

/// Deterministic pseudo-random values in `[-1, 1)`.
pub fn lcg_values(seed: u64, n: usize) -> Vec<f64> {
    let mut state = seed ^ 0x5DEECE66D;
    (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

/// Five small two-channel nets on 16-pixel inputs.
pub fn small_specs() -> Vec<NetSpec> {
    let one = |out_ch, kernel| {
        NetSpec::new(16, vec![ConvBlock { in_ch: 2, out_ch, kernel }], HeadKind::TwoChannel).unwrap()
    };
    vec![
        one(4, 5),
        one(3, 3),
        one(6, 4),
        NetSpec::new(
            16,
            vec![
                ConvBlock { in_ch: 2, out_ch: 3, kernel: 3 },
                ConvBlock { in_ch: 3, out_ch: 4, kernel: 3 },
            ],
            HeadKind::TwoChannel,
        )
        .unwrap(),
        NetSpec::new(
            16,
            vec![
                ConvBlock { in_ch: 2, out_ch: 2, kernel: 5 },
                ConvBlock { in_ch: 2, out_ch: 3, kernel: 2 },
            ],
            HeadKind::TwoChannel,
        )
        .unwrap(),
    ]
}

/// Analytic vs. numeric gradients for every small config under both losses.
pub fn gradient_suite() -> Vec<(usize, LossKind, GradCheck)> {
    let mut out = Vec::new();
    for (ci, spec) in small_specs().into_iter().enumerate() {
        for kind in [LossKind::Hinge, LossKind::Logistic] {
            let params = NetworkParams::init(&spec, 100 + ci as u64);
            let labels = [Label::Match, Label::NonMatch, Label::Match];
            let samples: Vec<(Patch, Patch, Label)> = labels
                .iter()
                .enumerate()
                .map(|(i, &l)| {
                    let seed = (ci * 10 + i) as u64;
                    (
                        Patch::new(16, lcg_values(seed * 2 + 1, 256), (0, 0)).unwrap(),
                        Patch::new(16, lcg_values(seed * 2 + 2, 256), (0, 0)).unwrap(),
                        l,
                    )
                })
                .collect();
            let (grads, _) = backward(&params, &samples, kind).unwrap();
            let batch: Vec<(Vec<f64>, f64)> = samples
                .iter()
                .map(|(a, b, l)| ([a.pixels(), b.pixels()].concat(), l.sign()))
                .collect();
            out.push((ci, kind, check_gradients(&spec, &params, &batch, kind, grads.layers(), 1e-3)));
        }
    }
    out
}
