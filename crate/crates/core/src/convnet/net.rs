use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::train::LabeledPair;
use super::{ConvNetError, NetSpec, NetworkParams};
use crate::imaging::Patch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `max(0, 1 - y s)`
    #[default]
    Hinge,
    /// `ln(1 + exp(-y s))`
    Logistic,
}

/// Per-sample loss for a score and a label in `{-1, +1}`.
pub fn loss(score: f64, label: f64, kind: LossKind) -> f64 {
    let margin = label * score;
    match kind {
        LossKind::Hinge => (1.0 - margin).max(0.0),
        LossKind::Logistic => softplus(-margin),
    }
}

/// Derivative of [`loss`] with respect to the score.
fn loss_grad(score: f64, label: f64, kind: LossKind) -> f64 {
    let margin = label * score;
    match kind {
        LossKind::Hinge => {
            if margin < 1.0 {
                -label
            } else {
                0.0
            }
        }
        LossKind::Logistic => -label * sigmoid(-margin),
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gradients laid out like [`NetworkParams`]: `(weight, bias)` per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(spec: &NetSpec) -> Self {
        Self {
            layers: NetworkParams::shapes(spec)
                .into_iter()
                .map(|(w, b)| {
                    (
                        vec![0.0; w.iter().product()],
                        vec![0.0; b.iter().product()],
                    )
                })
                .collect(),
        }
    }

    pub fn layers(&self) -> &[(Vec<f64>, Vec<f64>)] {
        &self.layers
    }

    fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(x, y)| *x += y);
            b.iter_mut().zip(ob).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, s: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|x| *x *= s);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `C = op(A) * op(B) + beta * C` for contiguous row-major matrices, where
/// `op(A)` is `m x k` and `op(B)` is `k x n`. A transposed operand is stored
/// in its untransposed layout.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the extents described by the
    // dimensions and strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

struct BlockGeom {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    side_in: usize,
    side_conv: usize,
    side_out: usize,
}

impl BlockGeom {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    fn conv_len(&self) -> usize {
        self.side_conv * self.side_conv
    }
}

#[derive(Default)]
struct BlockCache {
    col: Vec<f64>,
    /// Pre-activation conv output, `out_ch x conv_len`.
    z: Vec<f64>,
    /// Index into `z` of each pooled maximum.
    argmax: Vec<usize>,
    out: Vec<f64>,
}

/// Activations retained for one backward pass.
#[derive(Default)]
pub(crate) struct Cache {
    blocks: Vec<BlockCache>,
}

/// `f64` copy of a parameter set, ready for repeated evaluation.
pub struct PreparedNet {
    spec: NetSpec,
    geoms: Vec<BlockGeom>,
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PreparedNet {
    pub fn new(params: &NetworkParams) -> Self {
        Self::from_f64(
            params.spec(),
            params
                .layers()
                .iter()
                .map(|l| {
                    (
                        l.weight.data().iter().map(|&v| v as f64).collect(),
                        l.bias.data().iter().map(|&v| v as f64).collect(),
                    )
                })
                .collect(),
        )
    }

    pub(crate) fn from_f64(spec: &NetSpec, layers: Vec<(Vec<f64>, Vec<f64>)>) -> Self {
        let sides = spec.sides();
        let geoms = spec
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| BlockGeom {
                in_ch: b.in_ch,
                out_ch: b.out_ch,
                kernel: b.kernel,
                side_in: sides[i],
                side_conv: sides[i] - b.kernel + 1,
                side_out: sides[i + 1],
            })
            .collect();
        Self {
            spec: spec.clone(),
            geoms,
            layers,
        }
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn input_len(&self) -> usize {
        let s = self.spec.input_size;
        self.spec.head.input_channels() * s * s
    }

    /// Score of a channel-stacked input (`channels x side x side`).
    pub fn score(&self, input: &[f64]) -> f64 {
        let mut cache = Cache::default();
        self.forward_cached(input, &mut cache)
    }

    /// Score of two patches stacked as (a, b).
    pub fn score_pair(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut input = Vec::with_capacity(a.len() + b.len());
        input.extend_from_slice(a);
        input.extend_from_slice(b);
        self.score(&input)
    }

    /// Flattened output of the conv blocks.
    pub fn features(&self, input: &[f64]) -> Vec<f64> {
        let mut cache = Cache::default();
        self.run_blocks(input, &mut cache);
        cache.blocks.pop().map(|b| b.out).unwrap_or_default()
    }

    fn run_blocks(&self, input: &[f64], cache: &mut Cache) {
        cache.blocks.resize_with(self.geoms.len(), BlockCache::default);
        for (i, g) in self.geoms.iter().enumerate() {
            let (before, rest) = cache.blocks.split_at_mut(i);
            let x: &[f64] = if i == 0 { input } else { &before[i - 1].out };
            let bc = &mut rest[0];
            let (w, bias) = &self.layers[i];
            im2col(x, g, &mut bc.col);
            bc.z.resize(g.out_ch * g.conv_len(), 0.0);
            for (o, row) in bc.z.chunks_mut(g.conv_len()).enumerate() {
                row.fill(bias[o]);
            }
            gemm(g.out_ch, g.patch_len(), g.conv_len(), w, false, &bc.col, false, &mut bc.z, 1.0);
            relu_pool(&bc.z, g, &mut bc.out, &mut bc.argmax);
        }
    }

    pub(crate) fn forward_cached(&self, input: &[f64], cache: &mut Cache) -> f64 {
        debug_assert_eq!(input.len(), self.input_len());
        self.run_blocks(input, cache);
        let feats = &cache.blocks.last().expect("at least one block").out;
        let (w, b) = self.layers.last().expect("linear head");
        b[0] + w.iter().zip(feats).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Accumulates `dscore * d(score)/d(params)` for the sample whose
    /// activations are in `cache`.
    pub(crate) fn backward_cached(&self, cache: &mut Cache, dscore: f64, grads: &mut Gradients) {
        let n_blocks = self.geoms.len();
        let (fc_w, _) = &self.layers[n_blocks];
        let feats = &cache.blocks[n_blocks - 1].out;
        {
            let (gw, gb) = &mut grads.layers[n_blocks];
            for (g, f) in gw.iter_mut().zip(feats) {
                *g += dscore * f;
            }
            gb[0] += dscore;
        }
        let mut d_out: Vec<f64> = fc_w.iter().map(|w| w * dscore).collect();
        let mut dz = Vec::new();
        let mut dcol = Vec::new();
        for i in (0..n_blocks).rev() {
            let g = &self.geoms[i];
            let bc = &cache.blocks[i];
            // Route through the pool and ReLU.
            dz.clear();
            dz.resize(g.out_ch * g.conv_len(), 0.0);
            for (d, &idx) in d_out.iter().zip(&bc.argmax) {
                if bc.z[idx] > 0.0 {
                    dz[idx] += d;
                }
            }
            let (gw, gb) = &mut grads.layers[i];
            gemm(g.out_ch, g.conv_len(), g.patch_len(), &dz, false, &bc.col, true, gw, 1.0);
            for (o, row) in dz.chunks(g.conv_len()).enumerate() {
                gb[o] += row.iter().sum::<f64>();
            }
            if i > 0 {
                dcol.resize(g.patch_len() * g.conv_len(), 0.0);
                let (w, _) = &self.layers[i];
                gemm(g.patch_len(), g.out_ch, g.conv_len(), w, true, &dz, false, &mut dcol, 0.0);
                d_out = col2im(&dcol, g);
            }
        }
    }
}

fn im2col(x: &[f64], g: &BlockGeom, col: &mut Vec<f64>) {
    let (k, s, sc) = (g.kernel, g.side_in, g.side_conv);
    col.resize(g.patch_len() * g.conv_len(), 0.0);
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &x[c * s * s..(c + 1) * s * s];
        for ky in 0..k {
            for kx in 0..k {
                let dst = &mut col[row * sc * sc..(row + 1) * sc * sc];
                for oy in 0..sc {
                    let src = &plane[(oy + ky) * s + kx..(oy + ky) * s + kx + sc];
                    dst[oy * sc..(oy + 1) * sc].copy_from_slice(src);
                }
                row += 1;
            }
        }
    }
}

fn col2im(dcol: &[f64], g: &BlockGeom) -> Vec<f64> {
    let (k, s, sc) = (g.kernel, g.side_in, g.side_conv);
    let mut dx = vec![0.0; g.in_ch * s * s];
    let mut row = 0;
    for c in 0..g.in_ch {
        let plane = &mut dx[c * s * s..(c + 1) * s * s];
        for ky in 0..k {
            for kx in 0..k {
                let src = &dcol[row * sc * sc..(row + 1) * sc * sc];
                for oy in 0..sc {
                    let dst = &mut plane[(oy + ky) * s + kx..(oy + ky) * s + kx + sc];
                    for (d, v) in dst.iter_mut().zip(&src[oy * sc..(oy + 1) * sc]) {
                        *d += v;
                    }
                }
                row += 1;
            }
        }
    }
    dx
}

/// ReLU followed by 2x2 max pooling (floor). Records the argmax of each
/// window in `z` coordinates; ties go to the first in row-major order.
fn relu_pool(z: &[f64], g: &BlockGeom, out: &mut Vec<f64>, argmax: &mut Vec<usize>) {
    let (sc, so) = (g.side_conv, g.side_out);
    out.resize(g.out_ch * so * so, 0.0);
    argmax.resize(g.out_ch * so * so, 0);
    for c in 0..g.out_ch {
        let base = c * sc * sc;
        for py in 0..so {
            for px in 0..so {
                let mut best_idx = base + (2 * py) * sc + 2 * px;
                let mut best = z[best_idx].max(0.0);
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * py + dy) * sc + 2 * px + dx;
                    let v = z[idx].max(0.0);
                    if v > best {
                        best = v;
                        best_idx = idx;
                    }
                }
                let o = c * so * so + py * so + px;
                out[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
}

fn check_patch(spec: &NetSpec, p: &Patch) -> Result<(), ConvNetError> {
    if p.size() != spec.input_size {
        return Err(ConvNetError::ShapeMismatch(format!(
            "patch side {} but the network expects {}",
            p.size(),
            spec.input_size
        )));
    }
    Ok(())
}

fn require_two_channel(spec: &NetSpec) -> Result<(), ConvNetError> {
    if spec.head != super::HeadKind::TwoChannel {
        return Err(ConvNetError::ShapeMismatch(
            "network is not a 2-channel model".into(),
        ));
    }
    Ok(())
}

/// Similarity score of a (standardized) patch pair; positive means match.
pub fn forward_two_channel(
    params: &NetworkParams,
    a: &Patch,
    b: &Patch,
) -> Result<f64, ConvNetError> {
    require_two_channel(params.spec())?;
    check_patch(params.spec(), a)?;
    check_patch(params.spec(), b)?;
    Ok(PreparedNet::new(params).score_pair(a.pixels(), b.pixels()))
}

pub fn predict(
    params: &NetworkParams,
    a: &Patch,
    b: &Patch,
    threshold: f64,
) -> Result<bool, ConvNetError> {
    Ok(forward_two_channel(params, a, b)? > threshold)
}

/// Exact gradients of the mean loss over `batch`, and that mean loss.
pub fn backward<S: LabeledPair + Sync>(
    params: &NetworkParams,
    batch: &[S],
    kind: LossKind,
) -> Result<(Gradients, f64), ConvNetError> {
    require_two_channel(params.spec())?;
    if batch.is_empty() {
        return Err(ConvNetError::EmptyDataset("backward batch"));
    }
    let mut inputs = Vec::with_capacity(batch.len());
    for s in batch {
        let (a, b) = s.patches();
        check_patch(params.spec(), a)?;
        check_patch(params.spec(), b)?;
        let mut x = Vec::with_capacity(2 * a.pixels().len());
        x.extend_from_slice(a.pixels());
        x.extend_from_slice(b.pixels());
        inputs.push((x, s.label().sign()));
    }
    let net = PreparedNet::new(params);
    let refs: Vec<(&[f64], f64)> = inputs.iter().map(|(x, y)| (x.as_slice(), *y)).collect();
    let stats = batch_gradients(&net, &refs, kind);
    let n = batch.len() as f64;
    let mut grads = stats.grads;
    grads.scale(1.0 / n);
    Ok((grads, stats.loss_sum / n))
}

pub(crate) struct BatchStats {
    pub grads: Gradients,
    pub loss_sum: f64,
    pub correct: usize,
}

/// Samples per reduction chunk. Fixed so that the summation order, and
/// hence the result, does not depend on the number of worker threads.
const CHUNK: usize = 8;

/// Summed (not averaged) gradients and loss over `inputs`.
pub(crate) fn batch_gradients(
    net: &PreparedNet,
    inputs: &[(&[f64], f64)],
    kind: LossKind,
) -> BatchStats {
    let partials: Vec<BatchStats> = inputs
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(net.spec());
            let mut cache = Cache::default();
            let mut loss_sum = 0.0;
            let mut correct = 0;
            for &(x, y) in chunk {
                let s = net.forward_cached(x, &mut cache);
                loss_sum += loss(s, y, kind);
                if (s > 0.0) == (y > 0.0) {
                    correct += 1;
                }
                let d = loss_grad(s, y, kind);
                if d != 0.0 {
                    net.backward_cached(&mut cache, d, &mut grads);
                }
            }
            BatchStats {
                grads,
                loss_sum,
                correct,
            }
        })
        .collect();
    let mut total = BatchStats {
        grads: Gradients::zeros_like(net.spec()),
        loss_sum: 0.0,
        correct: 0,
    };
    for p in partials {
        total.grads.add(&p.grads);
        total.loss_sum += p.loss_sum;
        total.correct += p.correct;
    }
    total
}
