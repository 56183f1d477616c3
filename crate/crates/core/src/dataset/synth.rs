use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AlignedPair, DatasetError, Provenance};
use crate::fft::{bin_frequency, Fft2};
use crate::geometry::Similarity;
use crate::imaging::GrayImage;
use crate::rng::substream;

/// Which side the second view is insonified from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Viewpoint {
    /// Both views cast shadows in the same direction.
    Aligned,
    /// The second view looks from the opposite heading: shadows and
    /// highlights flip sides.
    Reversed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub width: usize,
    pub height: usize,
    /// e-folding distance of the seabed texture autocorrelation.
    pub texture_corr_len: f64,
    /// Standard deviation of seabed reflectivity around `texture_level`.
    pub texture_contrast: f64,
    pub texture_level: f64,
    pub target_count: usize,
    /// Semi-axis range of the elliptical targets.
    pub target_size: (f64, f64),
    /// Shadow length as a multiple of the target's larger semi-axis.
    pub shadow_length: (f64, f64),
    /// Direction shadows are cast in view A (radians, image axes).
    pub shadow_direction: f64,
    /// Overrides the direction derived from `viewpoint` for view B.
    pub shadow_direction_b: Option<f64>,
    pub viewpoint: Viewpoint,
    pub gamma_range: (f64, f64),
    pub sigmoid_gain_range: (f64, f64),
    /// Variance of the unit-mean multiplicative speckle; 0 disables it.
    pub speckle_variance: f64,
    /// Integer translation of B relative to A is drawn from
    /// `[-max_translation, max_translation]` on each axis.
    pub max_translation: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            texture_corr_len: 3.0,
            texture_contrast: 0.12,
            texture_level: 0.35,
            target_count: 10,
            target_size: (4.0, 10.0),
            shadow_length: (1.5, 3.0),
            shadow_direction: 0.0,
            shadow_direction_b: None,
            viewpoint: Viewpoint::Reversed,
            gamma_range: (0.4, 2.5),
            sigmoid_gain_range: (4.0, 12.0),
            speckle_variance: 0.3,
            max_translation: 0,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64), positive: bool) -> Result<(), DatasetError> {
    let ok = lo.is_finite() && hi.is_finite() && lo <= hi && (!positive || lo > 0.0);
    if ok {
        Ok(())
    } else {
        Err(DatasetError::InvalidSynthParams(format!(
            "{name} range ({lo}, {hi}) is invalid"
        )))
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), DatasetError> {
        let bad = |m: String| Err(DatasetError::InvalidSynthParams(m));
        if self.width < 32 || self.height < 32 {
            return bad(format!("image must be at least 32x32, got {}x{}", self.width, self.height));
        }
        if !(self.texture_corr_len > 0.0 && self.texture_corr_len.is_finite()) {
            return bad(format!("texture correlation length {}", self.texture_corr_len));
        }
        if !(self.texture_contrast >= 0.0 && self.texture_level > 0.0)
            || !self.texture_contrast.is_finite()
            || !self.texture_level.is_finite()
        {
            return bad("texture level must be positive and contrast non-negative".into());
        }
        check_range("target size", self.target_size, true)?;
        check_range("shadow length", self.shadow_length, false)?;
        if self.shadow_length.0 < 0.0 {
            return bad("shadow length must be non-negative".into());
        }
        check_range("gamma", self.gamma_range, true)?;
        check_range("sigmoid gain", self.sigmoid_gain_range, true)?;
        if !(self.speckle_variance >= 0.0 && self.speckle_variance.is_finite()) {
            return bad(format!("speckle variance {}", self.speckle_variance));
        }
        if !self.shadow_direction.is_finite() || self.shadow_direction_b.is_some_and(|d| !d.is_finite()) {
            return bad("shadow direction must be finite".into());
        }
        let m = self.max_translation as usize;
        if 2 * m >= self.width.min(self.height) {
            return bad(format!("translation {m} leaves no overlap"));
        }
        Ok(())
    }

    fn direction_b(&self) -> f64 {
        self.shadow_direction_b.unwrap_or(match self.viewpoint {
            Viewpoint::Aligned => self.shadow_direction,
            Viewpoint::Reversed => self.shadow_direction + PI,
        })
    }
}

struct Target {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    shadow: f64,
    level: f64,
}

impl Target {
    /// Offset from the center in the ellipse frame, scaled to the unit circle.
    fn local(&self, dx: f64, dy: f64) -> (f64, f64) {
        let u = self.cos * dx + self.sin * dy;
        let v = -self.sin * dx + self.cos * dy;
        (u / self.a, v / self.b)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (u, v) = self.local(x - self.cx, y - self.cy);
        u * u + v * v <= 1.0
    }

    /// True when the segment from `(x, y)` back toward the sonar, of the
    /// target's shadow length, crosses the ellipse.
    fn shadows(&self, x: f64, y: f64, dir: (f64, f64)) -> bool {
        let (pu, pv) = self.local(x - self.cx, y - self.cy);
        let (du, dv) = self.local(dir.0, dir.1);
        let len = self.shadow * self.a.max(self.b);
        let dd = du * du + dv * dv;
        let t = ((pu * du + pv * dv) / dd).clamp(0.0, len);
        let (qu, qv) = (pu - t * du, pv - t * dv);
        qu * qu + qv * qv <= 1.0
    }

    /// Fraction of the incoming beam hitting the surface at `(x, y)`.
    fn facing(&self, x: f64, y: f64, dir: (f64, f64)) -> f64 {
        let (u, v) = self.local(x - self.cx, y - self.cy);
        // outward normal in image axes
        let (nu, nv) = (u / self.a, v / self.b);
        let nx = self.cos * nu - self.sin * nv;
        let ny = self.sin * nu + self.cos * nv;
        let norm = (nx * nx + ny * ny).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        (-(nx * dir.0 + ny * dir.1) / norm).max(0.0)
    }
}

/// Zero-mean, unit-variance Gaussian field with `exp(-r / corr_len)`
/// autocorrelation, generated by spectral shaping of white noise.
fn correlated_texture(w: usize, h: usize, corr_len: f64, rng: &mut impl Rng) -> Vec<f64> {
    let noise: Vec<f64> = (0..w * h).map(|_| rng.sample(StandardNormal)).collect();
    let fft = Fft2::new(w, h);
    let mut spec = fft.forward_real(&noise);
    for y in 0..h {
        let fy = bin_frequency(y, h);
        for x in 0..w {
            let fx = bin_frequency(x, w);
            let k2 = (2.0 * PI * corr_len).powi(2) * (fx * fx + fy * fy);
            spec[y * w + x] *= (1.0 + k2).powf(-0.75);
        }
    }
    spec[0] = Complex64::new(0.0, 0.0);
    fft.inverse(&mut spec);
    let mut out: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let n = out.len() as f64;
    let mean = out.iter().sum::<f64>() / n;
    let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in &mut out {
        *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 };
    }
    out
}

fn draw(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

const SHADOW_GAIN: f64 = 0.12;
const HIGHLIGHT_GAIN: f64 = 0.9;
const DISPLAY_GAIN: f64 = 1.7;

struct Scene {
    width: usize,
    reflect: Vec<f64>,
    targets: Vec<Target>,
}

impl Scene {
    /// Backscatter seen at scene point `(sx, sy)` with shadows cast along `dir`.
    fn backscatter(&self, sx: usize, sy: usize, dir: (f64, f64)) -> f64 {
        let (x, y) = (sx as f64 + 0.5, sy as f64 + 0.5);
        let mut r = self.reflect[sy * self.width + sx];
        for t in &self.targets {
            if t.contains(x, y) {
                return t.level + HIGHLIGHT_GAIN * t.facing(x, y, dir);
            }
        }
        if self.targets.iter().any(|t| t.shadows(x, y, dir)) {
            r *= SHADOW_GAIN;
        }
        r
    }
}

/// Generates two views of one synthetic seabed scene.
///
/// View A and view B share texture and target geometry. They differ in
/// shadow direction, speckle realisation, and a monotone intensity remap
/// (sigmoid then gamma) applied to B only. The returned transform is exact.
pub fn synth_pair(params: &SynthParams, seed: u64) -> Result<AlignedPair, DatasetError> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let m = params.max_translation as i64;
    let mut geo = substream(seed, 0);
    let (tx, ty) = if m > 0 {
        (geo.random_range(-m..=m), geo.random_range(-m..=m))
    } else {
        (0, 0)
    };
    let cw = w + 2 * m as usize;
    let ch = h + 2 * m as usize;

    let mut tex_rng = substream(seed, 1);
    let field = correlated_texture(cw, ch, params.texture_corr_len, &mut tex_rng);
    let reflect: Vec<f64> = field
        .iter()
        .map(|n| (params.texture_level + params.texture_contrast * n).max(0.02))
        .collect();

    let targets = (0..params.target_count)
        .map(|_| {
            let a = draw(&mut geo, params.target_size);
            let b = draw(&mut geo, params.target_size);
            let theta: f64 = geo.random_range(0.0..PI);
            Target {
                cx: geo.random_range(0.0..cw as f64),
                cy: geo.random_range(0.0..ch as f64),
                a,
                b,
                cos: theta.cos(),
                sin: theta.sin(),
                shadow: draw(&mut geo, params.shadow_length),
                level: geo.random_range(0.35..0.6),
            }
        })
        .collect();
    let scene = Scene {
        width: cw,
        reflect,
        targets,
    };

    let dir = |a: f64| (a.cos(), a.sin());
    let gain = draw(&mut geo, params.sigmoid_gain_range);
    let gamma = draw(&mut geo, params.gamma_range);
    let sig = |v: f64| 1.0 / (1.0 + (-gain * (v - 0.5)).exp());
    let (s0, s1) = (sig(0.0), sig(1.0));
    let remap = |v: f64| ((sig(v) - s0) / (s1 - s0)).clamp(0.0, 1.0).powf(gamma);

    let speckle = if params.speckle_variance > 0.0 {
        let k = 1.0 / params.speckle_variance;
        Some(Gamma::new(k, params.speckle_variance).map_err(|e| {
            DatasetError::InvalidSynthParams(format!("speckle: {e}"))
        })?)
    } else {
        None
    };
    let render = |origin: (i64, i64), d: (f64, f64), stream: u64, post: &dyn Fn(f64) -> f64| {
        let mut rng = substream(seed, stream);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let sx = (x as i64 + origin.0) as usize;
                let sy = (y as i64 + origin.1) as usize;
                let mut r = scene.backscatter(sx, sy, d);
                if let Some(g) = &speckle {
                    r *= g.sample(&mut rng);
                }
                let v = 1.0 - (-DISPLAY_GAIN * r).exp();
                px.push(post(v));
            }
        }
        GrayImage::from_clamped(w, h, px)
    };
    let img_a = render((m, m), dir(params.shadow_direction), 2, &|v| v)?;
    let img_b = render((m - tx, m - ty), dir(params.direction_b()), 3, &remap)?;
    AlignedPair::new(
        img_a,
        img_b,
        Similarity::translation(tx as f64, ty as f64),
        Provenance::Synthetic { seed },
    )
}
